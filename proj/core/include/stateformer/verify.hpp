#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stf {

struct VerifyResult {
    std::string name;
    bool ok = false;
    std::string detail;  // empty on pass
};

// runs every module's core invariant as a fast self-contained check
std::vector<VerifyResult> run_verify_suite();

// one line per check ("ok <name>" / "FAIL <name>: <detail>") plus a summary
// line; returns 0 when everything passed, 1 otherwise
int print_verify_report(std::ostream& out);

namespace oracle {

// reference kernelized normalized linear attention with phi(x) = 1 + elu(x).
// Causal over rows: out_i = (phi(q_i) sum_{j<=i} phi(k_j)^T v_j) /
// (phi(q_i) . sum_{j<=i} phi(k_j)). left_assoc materializes the score matrix
// first, the alternative carries the running state; algebraically equal.
std::vector<std::vector<double>> kernelized_la(const std::vector<std::vector<double>>& q,
                                               const std::vector<std::vector<double>>& k,
                                               const std::vector<std::vector<double>>& v,
                                               bool left_assoc);

}  // namespace oracle

}  // namespace stf
