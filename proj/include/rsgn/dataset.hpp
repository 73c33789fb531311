#pragma once

// Classification dataset loaders.
//
// LIBSVM sparse text: one observation per line,
//     <label> <index>:<value> <index>:<value> ...
// with 1-based, strictly increasing feature indices. Blank lines and lines
// starting with '#' are skipped. Missing features are zero.
//
// Dense CSV: comma-separated numbers, one observation per line, every line with
// the same field count. One field is the label (the last by default). A first
// line that does not parse as numbers is treated as a header and skipped.
//
// Labels must be {-1, +1} or {0, 1}; the latter is remapped to {-1, +1}.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/SparseCore>

#include "rsgn/core.hpp"
#include "rsgn/problems.hpp"

namespace rsgn {

enum class DatasetFormat { LibsvmSparse, DenseCsv };

struct CsvOptions {
  /// Column holding the label; negative values count from the end.
  int label_column = -1;
};

struct Dataset {
  std::variant<Matrix, SparseMatrix> observations;
  Vector labels;

  Index rows() const { return labels.size(); }
  Index cols() const {
    return std::visit([](const auto& m) -> Index { return m.cols(); }, observations);
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

inline bool parse_index(std::string_view text, long long& out) {
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

/// Maps {0,1} labels onto {-1,+1}; rejects anything else.
inline Vector normalize_labels(const std::vector<double>& raw) {
  const std::set<double> distinct(raw.begin(), raw.end());
  const bool pm = std::all_of(distinct.begin(), distinct.end(),
                              [](double v) { return v == 1.0 || v == -1.0; });
  const bool zero_one = std::all_of(distinct.begin(), distinct.end(),
                                    [](double v) { return v == 0.0 || v == 1.0; });
  if (!pm && !zero_one) throw ValidationError("labels must be {-1,+1} or {0,1}");
  Vector y(static_cast<Index>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    y[static_cast<Index>(i)] = (!pm && raw[i] == 0.0) ? -1.0 : raw[i];
  }
  return y;
}

}  // namespace detail

inline Dataset parse_libsvm(std::istream& in) {
  std::vector<double> labels;
  std::vector<Eigen::Triplet<double>> trips;
  long long max_index = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    std::istringstream tokens{std::string(body)};
    std::string tok;
    tokens >> tok;
    double label = 0.0;
    if (!detail::parse_double(tok, label)) throw ParseError("bad label '" + tok + "'", lineno);
    const Index row = static_cast<Index>(labels.size());
    long long previous = 0;
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw ParseError("expected index:value, got '" + tok + "'", lineno);
      long long idx = 0;
      double value = 0.0;
      if (!detail::parse_index(std::string_view(tok).substr(0, colon), idx) || idx < 1) {
        throw ParseError("bad feature index in '" + tok + "'", lineno);
      }
      if (idx <= previous) throw ParseError("feature indices must increase", lineno);
      if (!detail::parse_double(std::string_view(tok).substr(colon + 1), value)) {
        throw ParseError("bad feature value in '" + tok + "'", lineno);
      }
      previous = idx;
      max_index = std::max(max_index, idx);
      if (value != 0.0) trips.emplace_back(row, static_cast<Index>(idx - 1), value);
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw ValidationError("dataset is empty");
  SparseMatrix a(static_cast<Index>(labels.size()), static_cast<Index>(std::max(1LL, max_index)));
  a.setFromTriplets(trips.begin(), trips.end());
  a.makeCompressed();
  return {std::move(a), detail::normalize_labels(labels)};
}

inline Dataset parse_csv(std::istream& in, CsvOptions opts = {}) {
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  std::size_t width = 0;
  bool header_seen = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view body = detail::trim(line);
    if (body.empty()) continue;
    std::vector<double> fields;
    bool ok = true;
    std::size_t start = 0;
    while (true) {
      const auto comma = body.find(',', start);
      double v = 0.0;
      const auto field = body.substr(start, comma == std::string_view::npos ? body.npos : comma - start);
      if (!detail::parse_double(field, v)) {
        ok = false;
        break;
      }
      fields.push_back(v);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!ok) {
      if (rows.empty() && !header_seen) {
        header_seen = true;
        continue;
      }
      throw ParseError("non-numeric field", lineno);
    }
    if (fields.size() < 2) throw ParseError("need at least one feature and a label", lineno);
    if (width == 0) {
      width = fields.size();
    } else if (fields.size() != width) {
      throw ParseError("expected " + std::to_string(width) + " fields, got " +
                           std::to_string(fields.size()),
                       lineno);
    }
    const int w = static_cast<int>(fields.size());
    const int lc = opts.label_column < 0 ? w + opts.label_column : opts.label_column;
    if (lc < 0 || lc >= w) throw ParseError("label column out of range", lineno);
    labels.push_back(fields[static_cast<std::size_t>(lc)]);
    fields.erase(fields.begin() + lc);
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw ValidationError("dataset is empty");
  Matrix a(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      a(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return {std::move(a), detail::normalize_labels(labels)};
}

inline Dataset load_dataset(const std::string& path, DatasetFormat format, CsvOptions opts = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset '" + path + "'");
  return format == DatasetFormat::LibsvmSparse ? parse_libsvm(in) : parse_csv(in, opts);
}

inline DatasetFormat parse_dataset_format(const std::string& name) {
  if (name == "libsvm" || name == "libsvm_sparse") return DatasetFormat::LibsvmSparse;
  if (name == "csv" || name == "dense_csv") return DatasetFormat::DenseCsv;
  throw ParameterError("unknown dataset format '" + name + "'");
}

inline NlsProblem build_logistic(const Dataset& data, LogisticOptions opts = {}) {
  return std::visit([&](const auto& a) { return build_logistic(a, data.labels, opts); },
                    data.observations);
}

}  // namespace rsgn
