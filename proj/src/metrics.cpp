// SPDX-License-Identifier: Apache-2.0
#include "delaes/metrics.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>
#include <string>

#include "delaes/errors.hpp"

namespace delaes {

namespace {

void check_ratings(std::span<const int> actual, std::span<const int> predicted,
                   const ScoreRange& range) {
  if (actual.size() != predicted.size()) {
    throw DomainError("rating sequences differ in length: " + std::to_string(actual.size()) +
                      " vs " + std::to_string(predicted.size()));
  }
  if (range.rating_count() < 2) throw DomainError("a rating scale needs at least two values");
  for (std::size_t i = 0; i < actual.size(); ++i) {
    for (const auto& [name, v] : {std::pair{"actual", actual[i]}, std::pair{"predicted", predicted[i]}}) {
      if (!range.contains(v)) {
        throw DomainError(std::string(name) + " rating " + std::to_string(v) + " at position " +
                          std::to_string(i) + " outside " + std::to_string(range.min) + "-" +
                          std::to_string(range.max));
      }
    }
  }
}

template <typename Int>
bool parse_number(std::string_view s, Int& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

Eigen::MatrixXd weight_matrix(int n) {
  if (n < 2) throw DomainError("weight matrix needs N >= 2, got " + std::to_string(n));
  Eigen::MatrixXd w(n, n);
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) w(i, j) = static_cast<double>((i - j) * (i - j)) / denom;
  }
  return w;
}

Eigen::MatrixXd observed_matrix(std::span<const int> actual, std::span<const int> predicted,
                                const ScoreRange& range) {
  check_ratings(actual, predicted, range);
  const int n = range.rating_count();
  Eigen::MatrixXd o = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < actual.size(); ++k) o(actual[k] - range.min, predicted[k] - range.min) += 1.0;
  return o;
}

Eigen::MatrixXd expected_matrix(std::span<const int> actual, std::span<const int> predicted,
                                const ScoreRange& range) {
  check_ratings(actual, predicted, range);
  const int n = range.rating_count();
  Eigen::VectorXd hist_a = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd hist_p = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < actual.size(); ++k) {
    hist_a(actual[k] - range.min) += 1.0;
    hist_p(predicted[k] - range.min) += 1.0;
  }
  if (actual.empty()) return Eigen::MatrixXd::Zero(n, n);
  return hist_a * hist_p.transpose() / static_cast<double>(actual.size());
}

RatingMatrices rating_matrices(std::span<const int> actual, std::span<const int> predicted,
                               const ScoreRange& range) {
  return {range.rating_count(), weight_matrix(range.rating_count()),
          observed_matrix(actual, predicted, range), expected_matrix(actual, predicted, range)};
}

double qwk(std::span<const int> actual, std::span<const int> predicted, const ScoreRange& range) {
  if (actual.empty()) throw DomainError("kappa is undefined for zero items");
  const RatingMatrices m = rating_matrices(actual, predicted, range);
  const double num = m.weights.cwiseProduct(m.observed).sum();
  const double den = m.weights.cwiseProduct(m.expected).sum();
  if (den == 0.0) {
    if (m.observed == m.expected) return 1.0;
    throw DomainError("kappa is undefined: zero expected disagreement");
  }
  return 1.0 - num / den;
}

std::vector<IdScore> read_score_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::vector<IdScore> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto comma = line.find(',');
    IdScore row;
    const bool ok = comma != std::string::npos &&
                    parse_number(std::string_view(line).substr(0, comma), row.essay_id) &&
                    parse_number(std::string_view(line).substr(comma + 1), row.score);
    if (!ok) {
      if (line_no == 1) continue;  // header
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'essay_id,score'");
    }
    rows.push_back(row);
  }
  return rows;
}

void write_score_csv(const std::filesystem::path& path, std::span<const IdScore> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  for (const auto& r : rows) out << r.essay_id << ',' << r.score << '\n';
}

}  // namespace delaes
