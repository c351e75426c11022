#include "props/theory.hpp"

#include "props/rng.hpp"
#include "props/tensor.hpp"

#include <iomanip>
#include <sstream>

namespace props {

BigCount stirling2(int n, int k) {
  if (n < 0 || k < 0) throw ConfigError("stirling2 needs non-negative arguments");
  if (k > n) return 0;
  // Row-by-row recurrence S(i,j) = j·S(i-1,j) + S(i-1,j-1).
  std::vector<BigCount> row(static_cast<std::size_t>(k) + 1, 0);
  row[0] = 1;
  for (int i = 1; i <= n; ++i) {
    for (int j = std::min(i, k); j >= 1; --j) {
      row[static_cast<std::size_t>(j)] = j * row[static_cast<std::size_t>(j)] + row[static_cast<std::size_t>(j) - 1];
    }
    row[0] = 0;
  }
  return row[static_cast<std::size_t>(k)];
}

BigCount factorial(int n) {
  BigCount f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

double coverage_probability(int n_draws, int slots) {
  if (n_draws < 1 || slots < 1) throw ConfigError("coverage needs at least one draw and one slot");
  if (slots > n_draws) return 0.0;
  const BigCount hits = factorial(slots) * stirling2(n_draws, slots);
  const BigCount total = boost::multiprecision::pow(BigCount(slots), static_cast<unsigned>(n_draws));
  using boost::multiprecision::cpp_rational;
  return static_cast<double>(cpp_rational(hits, total));
}

double p_unique(int n_rules, int k, int tasks) { return coverage_probability(n_rules, k * tasks); }

double mc_coverage_oracle(int n_draws, int slots, std::uint64_t trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("need at least one trial");
  if (slots < 1 || slots > 64) throw ConfigError("slots must be in [1, 64]");
  const std::uint64_t full = slots == 64 ? ~0ULL : ((1ULL << slots) - 1);
  const CounterRng base(seed);
  std::uint64_t covered = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    CounterRng rng = base.split(t);
    std::uint64_t seen = 0;
    for (int i = 0; i < n_draws; ++i) seen |= 1ULL << rng.below(static_cast<std::uint64_t>(slots));
    covered += seen == full;
  }
  return static_cast<double>(covered) / static_cast<double>(trials);
}

double TheoryTable::at(int n, int tk) const {
  for (std::size_t i = 0; i < ns.size(); ++i) {
    for (std::size_t j = 0; j < tks.size(); ++j) {
      if (ns[i] == n && tks[j] == tk) return cells[i][j];
    }
  }
  throw DimensionError("no table cell for N=" + std::to_string(n) + ", Tk=" + std::to_string(tk));
}

std::string TheoryTable::to_csv() const {
  std::ostringstream out;
  out << "N";
  for (int tk : tks) out << ",Tk" << tk;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < ns.size(); ++i) {
    out << ns[i];
    for (double v : cells[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::string TheoryTable::to_text() const {
  std::ostringstream out;
  out << std::setw(4) << "N\\Tk";
  for (int tk : tks) out << std::setw(7) << tk;
  out << '\n' << std::fixed << std::setprecision(2);
  for (std::size_t i = 0; i < ns.size(); ++i) {
    out << std::setw(4) << ns[i];
    for (double v : cells[i]) out << std::setw(7) << v;
    out << '\n';
  }
  return out.str();
}

TheoryTable theory_table(const std::vector<int>& ns, const std::vector<int>& tks) {
  TheoryTable t{ns, tks, {}};
  for (int n : ns) {
    std::vector<double> row;
    for (int tk : tks) row.push_back(1.0 - coverage_probability(n, tk));
    t.cells.push_back(std::move(row));
  }
  return t;
}

}  // namespace props
