// SPDX-License-Identifier: Apache-2.0
#include "gridcast/record.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridcast/errors.hpp"

namespace fs = std::filesystem;

namespace gridcast {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": cannot parse number '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": cannot parse integer '" + s + "'");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string frame_file(int t, int c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "t%05d_c%d.pgm", t, c);
  return buf;
}

}  // namespace

std::uint8_t quantize_value(float v) {
  const float x = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(x * 255.0f));
}

float dequantize_value(std::uint8_t q) { return static_cast<float>(q) / 255.0f; }

Ogm SequenceRecord::frame_shell() const {
  Ogm f;
  f.grid = make_grid(h, w, c);
  f.ego_anchor_row = ego_anchor_row;
  f.ego_anchor_col = ego_anchor_col;
  f.meters_per_pixel = meters_per_pixel;
  f.binary_mode = binary_mode;
  f.roles = roles;
  return f;
}

Ogm SequenceRecord::frame(int t) const {
  if (t < 0 || t >= static_cast<int>(frames.size()))
    throw DataError("frame index " + std::to_string(t) + " out of range");
  Ogm f = frame_shell();
  const auto& q = frames[static_cast<std::size_t>(t)];
  for (std::size_t i = 0; i < q.size(); ++i) f.grid.data[i] = dequantize_value(q[i]);
  return f;
}

void SequenceRecord::push_frame(const Ogm& f) {
  std::vector<std::uint8_t> q(f.grid.data.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = quantize_value(f.grid.data[i]);
  frames.push_back(std::move(q));
}

std::string manifest_string(const SequenceRecord& rec) {
  std::ostringstream os;
  os << "h=" << rec.h << "\n";
  os << "w=" << rec.w << "\n";
  os << "c=" << rec.c << "\n";
  os << "meters_per_pixel=" << fmt_double(rec.meters_per_pixel) << "\n";
  os << "dt=" << fmt_double(rec.dt) << "\n";
  os << "ego_anchor_row=" << fmt_double(rec.ego_anchor_row) << "\n";
  os << "ego_anchor_col=" << fmt_double(rec.ego_anchor_col) << "\n";
  os << "value_mode=" << (rec.binary_mode ? "binary" : "real") << "\n";
  os << "channel_roles=";
  for (std::size_t i = 0; i < rec.roles.size(); ++i) {
    if (i) os << ",";
    os << role_name(rec.roles[i]);
  }
  os << "\n";
  os << "length=" << rec.length << "\n";
  os << "collision=" << (rec.collision ? 1 : 0) << "\n";
  return os.str();
}

void write_pgm(const std::string& path, const std::uint8_t* data, int h, int w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for write: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(h) * w);
  if (!f) throw DataError("short write: " + path);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw DataError("not a binary PGM (P5): " + path);
  int maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0) throw DataError("bad PGM header: " + path);
  if (maxval != 255) throw DataError("unsupported PGM maxval in " + path);
  f.get();  // single whitespace after maxval
  std::vector<std::uint8_t> data(static_cast<std::size_t>(h) * w);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (f.gcount() != static_cast<std::streamsize>(data.size())) throw DataError("truncated PGM: " + path);
  return data;
}

void write_record(const SequenceRecord& rec, const std::string& dir) {
  validate_record(rec, dir);
  fs::create_directories(fs::path(dir) / "frames");
  {
    std::ofstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!mf) throw DataError("cannot write manifest in " + dir);
    mf << manifest_string(rec);
  }
  const std::size_t plane = static_cast<std::size_t>(rec.h) * rec.w;
  for (int t = 0; t < rec.length; ++t)
    for (int ch = 0; ch < rec.c; ++ch)
      write_pgm((fs::path(dir) / "frames" / frame_file(t, ch)).string(),
                rec.frames[static_cast<std::size_t>(t)].data() + static_cast<std::size_t>(ch) * plane, rec.h, rec.w);
  {
    std::ofstream mc(fs::path(dir) / "measurements.csv", std::ios::binary);
    mc << "t,px,py,vx,vy\n";
    for (int t = 0; t < rec.length; ++t) {
      const auto& m = rec.measurements[static_cast<std::size_t>(t)];
      mc << t << "," << fmt_double(m.p.x) << "," << fmt_double(m.p.y) << "," << fmt_double(m.v.x) << ","
         << fmt_double(m.v.y) << "\n";
    }
  }
  {
    std::ofstream ac(fs::path(dir) / "actions.csv", std::ios::binary);
    ac << "t,alpha,tau\n";
    for (int t = 0; t + 1 < rec.length; ++t) {
      const auto& a = rec.actions[static_cast<std::size_t>(t)];
      ac << t << "," << fmt_double(a.alpha) << "," << fmt_double(a.tau) << "\n";
    }
  }
}

SequenceRecord read_record(const std::string& dir) {
  SequenceRecord rec;
  {
    std::ifstream mf(fs::path(dir) / "manifest.txt");
    if (!mf) throw DataError("missing manifest.txt in " + dir);
    std::string line;
    while (std::getline(mf, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError(dir + "/manifest.txt: bad line '" + line + "'");
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "h") rec.h = parse_int(val, "manifest h");
      else if (key == "w") rec.w = parse_int(val, "manifest w");
      else if (key == "c") rec.c = parse_int(val, "manifest c");
      else if (key == "meters_per_pixel") rec.meters_per_pixel = parse_double(val, "manifest meters_per_pixel");
      else if (key == "dt") rec.dt = parse_double(val, "manifest dt");
      else if (key == "ego_anchor_row") rec.ego_anchor_row = parse_double(val, "manifest ego_anchor_row");
      else if (key == "ego_anchor_col") rec.ego_anchor_col = parse_double(val, "manifest ego_anchor_col");
      else if (key == "value_mode") {
        if (val != "real" && val != "binary") throw DataError(dir + ": value_mode must be real or binary");
        rec.binary_mode = val == "binary";
      } else if (key == "channel_roles") {
        rec.roles.clear();
        for (const auto& r : split(val, ',')) rec.roles.push_back(role_from_name(r));
      } else if (key == "length") rec.length = parse_int(val, "manifest length");
      else if (key == "collision") rec.collision = parse_int(val, "manifest collision") != 0;
      else throw DataError(dir + "/manifest.txt: unknown key '" + key + "'");
    }
  }
  const std::size_t plane = static_cast<std::size_t>(rec.h) * rec.w;
  rec.frames.reserve(static_cast<std::size_t>(rec.length));
  for (int t = 0; t < rec.length; ++t) {
    std::vector<std::uint8_t> frame(plane * rec.c);
    for (int ch = 0; ch < rec.c; ++ch) {
      const std::string path = (fs::path(dir) / "frames" / frame_file(t, ch)).string();
      int h = 0, w = 0;
      auto data = read_pgm(path, h, w);
      if (h != rec.h || w != rec.w)
        throw DataError(path + ": extent " + std::to_string(w) + "x" + std::to_string(h) + " does not match manifest");
      std::copy(data.begin(), data.end(), frame.begin() + static_cast<std::size_t>(ch) * plane);
    }
    rec.frames.push_back(std::move(frame));
  }
  auto read_csv = [&](const std::string& name, int expected_cols) {
    std::ifstream f(fs::path(dir) / name);
    if (!f) throw DataError("missing " + name + " in " + dir);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto cells = split(line, ',');
      if (static_cast<int>(cells.size()) != expected_cols) throw DataError(dir + "/" + name + ": bad row '" + line + "'");
      std::vector<double> row;
      for (const auto& c : cells) row.push_back(parse_double(c, name));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  for (const auto& row : read_csv("measurements.csv", 5))
    rec.measurements.push_back({{row[1], row[2]}, {row[3], row[4]}});
  for (const auto& row : read_csv("actions.csv", 3)) rec.actions.push_back({row[1], row[2]});
  validate_record(rec, dir);
  return rec;
}

void validate_record(const SequenceRecord& rec, const std::string& context) {
  if (rec.h <= 0 || rec.w <= 0 || rec.c <= 0) throw DataError(context + ": bad extents");
  if (rec.length < 1) throw DataError(context + ": empty sequence");
  if (static_cast<int>(rec.roles.size()) != rec.c) throw DataError(context + ": channel_roles count != c");
  if (!(rec.meters_per_pixel > 0.0)) throw DataError(context + ": meters_per_pixel must be positive");
  if (!(rec.dt > 0.0)) throw DataError(context + ": dt must be positive");
  if (rec.ego_anchor_row < 0 || rec.ego_anchor_row > rec.h - 1 || rec.ego_anchor_col < 0 ||
      rec.ego_anchor_col > rec.w - 1)
    throw DataError(context + ": ego anchor outside grid");
  if (static_cast<int>(rec.frames.size()) != rec.length)
    throw DataError(context + ": frame count " + std::to_string(rec.frames.size()) + " != length " +
                    std::to_string(rec.length));
  const std::size_t want = static_cast<std::size_t>(rec.h) * rec.w * rec.c;
  for (const auto& f : rec.frames)
    if (f.size() != want) throw DataError(context + ": frame byte count mismatch");
  if (static_cast<int>(rec.measurements.size()) != rec.length)
    throw DataError(context + ": measurements rows " + std::to_string(rec.measurements.size()) + " != length");
  if (static_cast<int>(rec.actions.size()) != rec.length - 1)
    throw DataError(context + ": actions rows " + std::to_string(rec.actions.size()) + " != length-1");
  for (const auto& m : rec.measurements)
    if (!std::isfinite(m.p.x) || !std::isfinite(m.p.y) || !std::isfinite(m.v.x) || !std::isfinite(m.v.y))
      throw DataError(context + ": non-finite measurement");
  for (const auto& a : rec.actions)
    if (!std::isfinite(a.alpha) || !std::isfinite(a.tau)) throw DataError(context + ": non-finite action");
}

std::string record_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%05d", index);
  return buf;
}

std::vector<std::string> list_record_dirs(const std::string& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.txt")) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<SequenceRecord> load_dataset(const std::string& dir) {
  std::vector<SequenceRecord> out;
  for (const auto& d : list_record_dirs(dir)) out.push_back(read_record(d));
  if (out.empty()) throw DataError("no sequence records under " + dir);
  return out;
}

}  // namespace gridcast
