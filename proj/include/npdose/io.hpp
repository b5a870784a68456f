#pragma once

#include "dataset.hpp"
#include "errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace npdose {

//! Shortest decimal that parses back to the same double.
inline std::string
format_double(double x)
{
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

struct ColumnMapping
{
  std::string y_col = "Y";
  std::string t_col = "T";
  //! empty: every column other than y_col and t_col, in file order
  std::vector<std::string> s_cols;
};

struct LoadedData
{
  Dataset data;
  std::vector<std::string> s_names;
  std::size_t dropped_rows = 0;
};

namespace detail {

inline std::string_view
trim_ws(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view>
split_csv(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim_ws(line.substr(start)));
      return out;
    }
    out.push_back(trim_ws(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline bool
parse_finite(std::string_view cell, double& value)
{
  if (cell.empty())
    return false;
  if (cell.front() == '+')
    cell.remove_prefix(1);
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  return res.ec == std::errc() && res.ptr == cell.data() + cell.size() &&
         std::isfinite(value);
}

} // namespace detail

//! Comma-separated numeric table with a header row. Rows with missing or
//! non-numeric cells raise ParseError with their line number, or are skipped
//! and counted when `drop_bad` is set.
inline LoadedData
load_csv(std::istream& in, const ColumnMapping& mapping, bool drop_bad = false)
{
  std::string line;
  std::size_t line_no = 0;
  // skip leading blank lines
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim_ws(line).empty())
      break;
  }
  if (detail::trim_ws(line).empty())
    fail(ErrorCode::EmptyData, "input has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
    line.erase(0, 3);

  std::vector<std::string> header;
  for (auto f : detail::split_csv(line))
    header.emplace_back(f);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      fail(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto y_idx = column(mapping.y_col);
  const auto t_idx = column(mapping.t_col);
  std::vector<std::size_t> s_idx;
  LoadedData out;
  if (mapping.s_cols.empty()) {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (k != y_idx && k != t_idx) {
        s_idx.push_back(k);
        out.s_names.push_back(header[k]);
      }
  } else {
    for (const auto& name : mapping.s_cols) {
      s_idx.push_back(column(name));
      out.s_names.push_back(name);
    }
  }

  std::vector<double> ys, ts, ss;
  std::vector<double> row(header.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim_ws(line).empty())
      continue;
    const auto cells = detail::split_csv(line);
    bool ok = cells.size() == header.size();
    std::string problem = ok ? "" : "expected " + std::to_string(header.size()) +
                                      " fields, found " +
                                      std::to_string(cells.size());
    auto parse = [&](std::size_t k) {
      if (!ok)
        return 0.0;
      double v = 0.0;
      if (!detail::parse_finite(cells[k], v)) {
        ok = false;
        problem = "cell '" + std::string(cells[k]) + "' in column '" +
                  header[k] + "' is not a finite number";
      }
      return v;
    };
    const double y = parse(y_idx);
    const double t = parse(t_idx);
    for (std::size_t j = 0; j < s_idx.size(); ++j)
      row[j] = parse(s_idx[j]);
    if (!ok) {
      if (drop_bad) {
        ++out.dropped_rows;
        continue;
      }
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + problem);
    }
    ys.push_back(y);
    ts.push_back(t);
    ss.insert(ss.end(), row.begin(), row.begin() + static_cast<long>(s_idx.size()));
  }
  if (ys.empty())
    fail(ErrorCode::EmptyData, "input contains no data rows");

  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto d = static_cast<Eigen::Index>(s_idx.size());
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  Eigen::VectorXd t = Eigen::Map<Eigen::VectorXd>(ts.data(), n);
  RowMatrix s = Eigen::Map<RowMatrix>(ss.data(), n, d);
  out.data = Dataset(std::move(y), std::move(t), std::move(s));
  return out;
}

inline LoadedData
load_csv(const std::string& path, const ColumnMapping& mapping, bool drop_bad = false)
{
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::IoError, "cannot open '" + path + "'");
  return load_csv(in, mapping, drop_bad);
}

//! Header Y,T,S1..Sd (or the given covariate names); shortest round-trip
//! numbers.
inline void
write_csv(std::ostream& out,
          const Dataset& data,
          const std::vector<std::string>& s_names = {})
{
  out << "Y,T";
  for (Eigen::Index j = 0; j < data.d(); ++j)
    out << ','
        << (s_names.empty() ? "S" + std::to_string(j + 1)
                            : s_names[static_cast<std::size_t>(j)]);
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << format_double(data.y()(i)) << ',' << format_double(data.t()(i));
    for (Eigen::Index j = 0; j < data.d(); ++j)
      out << ',' << format_double(data.s()(i, j));
    out << '\n';
  }
}

} // namespace npdose
