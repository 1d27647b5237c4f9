#pragma once

#include <cstdlib>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stabsel/error.hpp"
#include "stabsel/rng.hpp"

namespace stabsel {

using Features = std::span<const double>;

/// Row-major feature matrix with one real label per row.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::size_t dim) : dim_(dim) {}

  void add(Features x, double y) {
    detail::require(x.size() == dim_, "dataset: feature dimension mismatch");
    features_.insert(features_.end(), x.begin(), x.end());
    labels_.push_back(y);
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return labels_.empty(); }

  Features x(std::size_t i) const { return {features_.data() + i * dim_, dim_}; }
  double y(std::size_t i) const { return labels_[i]; }
  std::span<const double> labels() const { return labels_; }

  /// Rows [begin, end) as a new dataset.
  Dataset slice(std::size_t begin, std::size_t end) const {
    Dataset out(dim_);
    for (std::size_t i = begin; i < end && i < size(); ++i) out.add(x(i), y(i));
    return out;
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out(dim_);
    for (std::size_t r : rows) out.add(x(r), y(r));
    return out;
  }

  /// Fisher-Yates shuffle of the rows.
  Dataset shuffled(Rng& rng) const {
    std::vector<std::size_t> rows(size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.uniform_index(i)]);
    return subset(rows);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::vector<double> labels_;
};

/// Reads a CSV with a header row; every column but the last is a feature,
/// the last is the label.
inline Dataset read_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("data: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("data: '" + path + "' is empty");
  std::size_t columns = 1;
  for (char c : line) columns += (c == ',');
  detail::require(columns >= 2, "data: need at least one feature column and a label column");

  Dataset data(columns - 1);
  std::vector<double> row;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    row.clear();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        throw InvalidArgument("data: non-numeric cell '" + cell + "' on line " + std::to_string(line_no));
      }
      row.push_back(v);
    }
    if (row.size() != columns) {
      throw InvalidArgument("data: line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                            " columns, expected " + std::to_string(columns));
    }
    data.add(Features(row.data(), columns - 1), row.back());
  }
  return data;
}

}  // namespace stabsel
