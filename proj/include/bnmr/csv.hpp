// Copyright 2026 The bnmr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Header-and-rows CSV reader for the plain comma-separated schemas used by
// this project. Fields never contain commas or quotes, so no quoting rules.

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "bnmr/errors.hpp"

namespace bnmr::csv {

struct Table {
  std::string source;                           // file name or stream label, for error messages
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;   // same arity as header, fields trimmed

  // 1-based data row number as users see it (header is line 1).
  std::string where(std::size_t row) const {
    return source + " row " + std::to_string(row + 2);
  }
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline Table read(std::istream& in, const std::string& source) {
  Table t;
  t.source = source;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (trim(line).front() == '#') continue;
    auto fields = split_line(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw ParseError(source + " row " + std::to_string(t.rows.size() + 2) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw ParseError(source + ": empty input, no header line");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read(in, path);
}

inline std::size_t column(const Table& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw ParseError(t.source + ": missing required column '" + name + "'");
}

inline double to_double(const Table& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(t.where(row) + ": '" + s + "' in column '" + t.header[col] + "' is not numeric");
  }
}

inline long long to_int(const Table& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(t.where(row) + ": '" + s + "' in column '" + t.header[col] + "' is not an integer");
  }
  return v;
}

}  // namespace bnmr::csv
