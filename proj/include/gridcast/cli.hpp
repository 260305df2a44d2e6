// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace gridcast {

// Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 data error.
int cli_run(const std::vector<std::string>& args);

}  // namespace gridcast
