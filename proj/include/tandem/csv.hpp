#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tandem/error.hpp"

namespace tandem::csv {

/// 17 significant digits round-trips every binary64 value.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

/// Strict float parse: the whole field must be consumed.
inline std::optional<double> parse_double(const std::string& field) {
  if (field.empty()) return std::nullopt;
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end != begin + field.size()) return std::nullopt;
  if (errno == ERANGE && std::isinf(v)) return v;
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Lines without their terminator; a trailing empty line is dropped.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    if (pos == std::string::npos) pos = text.size();
    std::string line = text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = pos + 1;
  }
  return lines;
}

/// Write-temp-then-rename so readers never see a partial artifact.
inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::io_failure, "short write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Row-at-a-time builder; doubles are rendered with format_double.
class Table {
 public:
  explicit Table(std::initializer_list<std::string_view> header) { start(header); }
  explicit Table(const std::vector<std::string>& header) { start(header); }

  Table& cell(std::string_view s) {
    sep();
    out_ << s;
    return *this;
  }
  Table& cell(const char* s) { return cell(std::string_view(s)); }
  Table& cell(const std::string& s) { return cell(std::string_view(s)); }
  Table& cell(double v) {
    sep();
    out_ << format_double(v);
    return *this;
  }
  template <class I>
    requires std::is_integral_v<I>
  Table& cell(I v) {
    sep();
    out_ << v;
    return *this;
  }
  Table& end_row() {
    if (in_row_ != columns_) throw Error(ErrorCode::invalid_argument, "csv row has wrong column count");
    out_ << '\n';
    in_row_ = 0;
    return *this;
  }

  std::string str() const { return out_.str(); }
  void write(const std::filesystem::path& path) const { write_atomic(path, str()); }

 private:
  template <class Range>
  void start(const Range& header) {
    bool first = true;
    for (const auto& h : header) {
      if (!first) out_ << ',';
      out_ << h;
      first = false;
    }
    out_ << '\n';
    columns_ = header.size();
  }
  void sep() {
    if (in_row_ > 0) out_ << ',';
    ++in_row_;
  }
  std::ostringstream out_;
  std::size_t columns_ = 0;
  std::size_t in_row_ = 0;
};

}  // namespace tandem::csv
