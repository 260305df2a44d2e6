// SPDX-License-Identifier: Apache-2.0
//
// One observation/action trajectory on disk: a directory with manifest.txt,
// frames/t%05d_c%d.pgm (binary P5, one file per channel), measurements.csv
// and actions.csv. Pixels store occupancy quantized to 8 bits; consumers
// operate on the dequantized values.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridcast/kinematics.hpp"
#include "gridcast/ogm.hpp"

namespace gridcast {

struct SequenceRecord {
  int h = 0, w = 0, c = 0;
  double meters_per_pixel = 0.25;
  double dt = 0.1;
  double ego_anchor_row = 0.0;
  double ego_anchor_col = 0.0;
  bool binary_mode = false;
  std::vector<ChannelRole> roles;
  int length = 0;  // T
  bool collision = false;

  std::vector<std::vector<std::uint8_t>> frames;  // T quantized frames, h*w*c each
  std::vector<Measurements> measurements;         // T rows
  std::vector<ActionCmd> actions;                 // T-1 rows

  Ogm frame(int t) const;                   // dequantized
  void push_frame(const Ogm& f);            // quantizes and appends
  Ogm frame_shell() const;                  // empty frame with this record's geometry
};

std::uint8_t quantize_value(float v);
float dequantize_value(std::uint8_t q);

void write_record(const SequenceRecord& rec, const std::string& dir);
SequenceRecord read_record(const std::string& dir);

// Throws DataError naming the offending file/field.
void validate_record(const SequenceRecord& rec, const std::string& context);

// PGM P5, maxval 255.
void write_pgm(const std::string& path, const std::uint8_t* data, int h, int w);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& h, int& w);

std::string manifest_string(const SequenceRecord& rec);

// All record directories under `dir` (sorted by name), loaded.
std::vector<SequenceRecord> load_dataset(const std::string& dir);
std::vector<std::string> list_record_dirs(const std::string& dir);

std::string record_dir_name(int index);

}  // namespace gridcast
