#pragma once

// Plain-text, line-oriented serialization for MDPs, policies and matrices.
//
//   mdp <n_states> <n_actions> <gamma>
//   rho <n_states floats>
//   P <s> <a> <n_states floats>      one line per (s, a)
//   R <s> <a> <n_states floats>      one line per (s, a)
//
//   policy <n_states> <n_actions>
//   <n_actions floats>               one line per state
//
//   matrix <rows> <cols>
//   <cols floats>                    one line per row
//
// Tokens are whitespace separated; '#' starts a comment that runs to the end
// of the line.

#include "relgap/mdp.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relgap {

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Shortest round-trip decimal representation of a double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

namespace io {

struct Line {
  int number = 0;
  std::vector<std::string> tokens;
};

/// Reads non-empty, comment-stripped lines.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::optional<Line> next() {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_number_;
      if (auto pos = raw.find('#'); pos != std::string::npos) raw.erase(pos);
      std::istringstream ss(raw);
      Line line{line_number_, {}};
      for (std::string tok; ss >> tok;) line.tokens.push_back(tok);
      if (!line.tokens.empty()) return line;
    }
    return std::nullopt;
  }

  Line expect(const std::string& what) {
    auto line = next();
    if (!line) throw ParseError(line_number_ + 1, "unexpected end of input, expected " + what);
    return *line;
  }

  int line_number() const { return line_number_; }

 private:
  std::istream& in_;
  int line_number_ = 0;
};

inline double to_double(const Line& line, std::size_t i) {
  if (i >= line.tokens.size()) throw ParseError(line.number, "missing numeric field");
  const std::string& tok = line.tokens[i];
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(line.number, "malformed number '" + tok + "'");
  }
  return value;
}

inline int to_int(const Line& line, std::size_t i) {
  if (i >= line.tokens.size()) throw ParseError(line.number, "missing integer field");
  const std::string& tok = line.tokens[i];
  int value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(line.number, "malformed integer '" + tok + "'");
  }
  return value;
}

inline void expect_keyword(const Line& line, std::string_view keyword, std::size_t n_fields) {
  if (line.tokens.front() != keyword) {
    throw ParseError(line.number, "expected '" + std::string(keyword) + "', found '" +
                                      line.tokens.front() + "'");
  }
  if (line.tokens.size() != n_fields + 1) {
    throw ParseError(line.number, "'" + std::string(keyword) + "' expects " +
                                      std::to_string(n_fields) + " fields, found " +
                                      std::to_string(line.tokens.size() - 1));
  }
}

inline std::vector<double> numeric_row(const Line& line, std::size_t offset, int n) {
  if (line.tokens.size() != offset + static_cast<std::size_t>(n)) {
    throw ParseError(line.number, "expected " + std::to_string(n) + " values, found " +
                                      std::to_string(line.tokens.size() - offset));
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i] = to_double(line, offset + i);
  return out;
}

inline void write_row(std::ostream& out, const auto& values) {
  bool first = true;
  for (double x : values) {
    if (!first) out << ' ';
    out << format_double(x);
    first = false;
  }
  out << '\n';
}

}  // namespace io

inline TabularMdp read_mdp(std::istream& in) {
  io::LineReader reader(in);
  const io::Line header = reader.expect("mdp header");
  io::expect_keyword(header, "mdp", 3);
  const int n = io::to_int(header, 1);
  const int m = io::to_int(header, 2);
  const double gamma = io::to_double(header, 3);
  if (n <= 0 || m <= 0) throw ParseError(header.number, "state and action counts must be positive");

  const io::Line rho_line = reader.expect("rho");
  if (rho_line.tokens.front() != "rho") throw ParseError(rho_line.number, "expected 'rho'");
  const auto rho = io::numeric_row(rho_line, 1, n);

  Tensor3 p(n, m, n), r(n, m, n);
  std::vector<char> seen_p(static_cast<std::size_t>(n) * m, 0), seen_r(seen_p);
  int last_line = rho_line.number;
  while (auto line = reader.next()) {
    last_line = line->number;
    const std::string& kw = line->tokens.front();
    if (kw != "P" && kw != "R") throw ParseError(line->number, "unknown record '" + kw + "'");
    const int s = io::to_int(*line, 1);
    const int a = io::to_int(*line, 2);
    if (s < 0 || s >= n || a < 0 || a >= m) {
      throw ParseError(line->number, "state/action index out of range");
    }
    const auto row = io::numeric_row(*line, 3, n);
    auto& seen = kw == "P" ? seen_p : seen_r;
    Tensor3& target = kw == "P" ? p : r;
    if (seen[static_cast<std::size_t>(s) * m + a]) {
      throw ParseError(line->number, "duplicate " + kw + " record");
    }
    seen[static_cast<std::size_t>(s) * m + a] = 1;
    for (int sp = 0; sp < n; ++sp) target(s, a, sp) = row[sp];
  }
  for (std::size_t k = 0; k < seen_p.size(); ++k) {
    if (!seen_p[k] || !seen_r[k]) {
      throw ParseError(last_line, "missing P or R record for (s,a)=(" +
                                      std::to_string(k / m) + "," + std::to_string(k % m) + ")");
    }
  }
  try {
    return TabularMdp(std::move(p), std::move(r), Eigen::Map<const Vector>(rho.data(), n), gamma);
  } catch (const std::invalid_argument& e) {
    throw ParseError(last_line, e.what());
  }
}

inline void write_mdp(std::ostream& out, const TabularMdp& mdp) {
  const int n = mdp.n_states();
  out << "mdp " << n << ' ' << mdp.n_actions() << ' ' << format_double(mdp.discount()) << '\n';
  out << "rho ";
  io::write_row(out, mdp.initial_dist());
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < mdp.n_actions(); ++a) {
      out << "P " << s << ' ' << a << ' ';
      io::write_row(out, mdp.transition().row(s, a));
    }
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < mdp.n_actions(); ++a) {
      out << "R " << s << ' ' << a << ' ';
      io::write_row(out, mdp.reward().row(s, a));
    }
}

namespace io {

inline Matrix read_table(LineReader& reader, std::string_view keyword) {
  const Line header = reader.expect(std::string(keyword) + " header");
  expect_keyword(header, keyword, 2);
  const int rows = to_int(header, 1);
  const int cols = to_int(header, 2);
  if (rows <= 0 || cols <= 0) throw ParseError(header.number, "dimensions must be positive");
  Matrix out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const Line line = reader.expect("row " + std::to_string(i));
    const auto row = numeric_row(line, 0, cols);
    for (int j = 0; j < cols; ++j) out(i, j) = row[j];
  }
  return out;
}

inline void write_table(std::ostream& out, std::string_view keyword, const Matrix& m) {
  out << keyword << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) write_row(out, m.row(i));
}

}  // namespace io

inline TabularPolicy read_policy(std::istream& in) {
  io::LineReader reader(in);
  Matrix probs = io::read_table(reader, "policy");
  try {
    return TabularPolicy(std::move(probs));
  } catch (const std::invalid_argument& e) {
    throw ParseError(reader.line_number(), e.what());
  }
}

inline void write_policy(std::ostream& out, const TabularPolicy& pi) {
  io::write_table(out, "policy", pi.probs());
}

inline Matrix read_matrix(std::istream& in) {
  io::LineReader reader(in);
  return io::read_table(reader, "matrix");
}

inline void write_matrix(std::ostream& out, const Matrix& m) { io::write_table(out, "matrix", m); }

inline TabularMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_mdp(in);
}

}  // namespace relgap
