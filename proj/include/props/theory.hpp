#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <string>
#include <vector>

// Rule-coverage combinatorics: how likely T tasks drawing k rules each from N
// end up covering all Tk slots.
namespace props {

using BigCount = boost::multiprecision::cpp_int;

/// Stirling number of the second kind, exact.
BigCount stirling2(int n, int k);
BigCount factorial(int n);

/// Probability that N uniform draws over m = T·k slots hit every slot:
///   m! · S(N, m) / m^N
/// evaluated in integers up to one final division. Zero when m > N.
double p_unique(int n_rules, int k, int tasks);
double coverage_probability(int n_draws, int slots);

/// Fraction of trials in which n_draws uniform draws over `slots` cover them all.
double mc_coverage_oracle(int n_draws, int slots, std::uint64_t trials, std::uint64_t seed);

struct TheoryTable {
  std::vector<int> ns;
  std::vector<int> tks;
  std::vector<std::vector<double>> cells;  // [n][tk] = 1 - P, full precision

  double at(int n, int tk) const;
  std::string to_csv() const;
  /// Aligned text, two decimals.
  std::string to_text() const;
};

TheoryTable theory_table(const std::vector<int>& ns = {12, 13, 14, 15, 16},
                         const std::vector<int>& tks = {4, 6, 8, 10});

}  // namespace props
