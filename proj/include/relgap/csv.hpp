#pragma once

#include "relgap/mdp_io.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace relgap {

/// Raised instead of writing a non-finite value.
class NanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using CsvCell = std::variant<long long, double, bool, std::string>;

inline std::string format_cell(const CsvCell& cell, const std::string& column) {
  return std::visit(
      [&](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) {
          if (!std::isfinite(v)) throw NanError("non-finite value in column '" + column + "'");
          return format_double(v);
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, long long>) {
          return std::to_string(v);
        } else {
          return v;
        }
      },
      cell);
}

/// CSV file with a fixed header. Rows are checked for arity and finiteness
/// before anything is written.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> header)
      : path_(path), header_(std::move(header)), out_(path) {
    if (!out_) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_line(header_);
  }

  void row(const std::vector<CsvCell>& cells) {
    if (cells.size() != header_.size()) {
      throw std::logic_error("CsvWriter: row arity does not match header of " + path_);
    }
    std::vector<std::string> text;
    text.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        text.push_back(format_cell(cells[i], header_[i]));
      } catch (const NanError& e) {
        throw NanError(path_ + ": " + e.what());
      }
    }
    write_line(text);
  }

 private:
  void write_line(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
    if (!out_) throw std::runtime_error("write failed for '" + path_ + "'");
  }

  std::string path_;
  std::vector<std::string> header_;
  std::ofstream out_;
};

}  // namespace relgap
