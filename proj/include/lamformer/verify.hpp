#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "lamformer/local_attention.hpp"

namespace lamformer {

struct VerifyOptions {
  std::size_t trials = 200;
  std::uint64_t seed = 0;
  LamOptions lam{};  // fault injection hook
  double tolerance = 1e-10;
};

struct SuiteResult {
  std::string name{};
  bool passed = true;
  double worst = 0.0;
  std::size_t cases = 0;
  std::string detail{};
};

// Rows of one oracle comparison that exceeded the tolerance.
struct RowDeviation {
  std::size_t n = 0, L = 0, row = 0;
  double deviation = 0.0;
};

struct VerifyReport {
  std::vector<SuiteResult> suites;
  std::vector<std::string> warnings;
  std::vector<RowDeviation> failing_rows;

  bool passed() const;
};

// Random (n, L, d_q, d_v) cases plus fixed edge cases (L = 1, L = n,
// L not dividing n, n < 2L).
struct OracleCase {
  std::size_t n, L, d_q, d_v;
};
std::vector<OracleCase> oracle_cases(std::size_t trials, std::uint64_t seed);

SuiteResult verify_oracle_equivalence(const VerifyOptions& opts, std::vector<RowDeviation>* failing_rows = nullptr);
SuiteResult verify_counters(const VerifyOptions& opts);
SuiteResult verify_equivariance(const VerifyOptions& opts);
SuiteResult verify_softmax_masking(const VerifyOptions& opts);
SuiteResult verify_gradients(const VerifyOptions& opts);

VerifyReport run_verify(const VerifyOptions& opts);
void print_verify_report(std::ostream& out, const VerifyReport& report);

}  // namespace lamformer
