#pragma once

// Minimal CSV writer: ',' delimiter, '.' decimal point regardless of locale,
// '#' comment lines. Doubles use the shortest round-trip representation.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "noisydiff/error.hpp"

namespace noisydiff {

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Six significant digits; for file names.
inline std::string format_label(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 6);
  return std::string(buf, res.ptr);
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view provenance, std::initializer_list<std::string_view> header)
      : out_(path, std::ios::binary) {
    if (!out_) throw ConfigError("cannot open output file " + path.string());
    if (!provenance.empty()) out_ << "# " << provenance << '\n';
    bool first = true;
    for (auto h : header) {
      if (!first) out_ << ',';
      out_ << h;
      first = false;
    }
    out_ << '\n';
    columns_ = header.size();
  }

  template <class... Ts>
  void row(const Ts&... values) {
    static_assert(sizeof...(Ts) > 0);
    bool first = true;
    ((write_field(values, first)), ...);
    out_ << '\n';
    if (!out_) throw NumericalError("write to CSV file failed");
  }

  std::size_t columns() const noexcept { return columns_; }

 private:
  template <class T>
  void write_field(const T& v, bool& first) {
    if (!first) out_ << ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>) {
      out_ << format_number(static_cast<double>(v));
    } else if constexpr (std::is_integral_v<T>) {
      out_ << std::to_string(v);
    } else {
      out_ << std::string_view(v);
    }
  }

  std::ofstream out_;
  std::size_t columns_ = 0;
};

}  // namespace noisydiff
