#pragma once

#include <cstdint>

namespace stf {

// counters filled by the generation engine when requested; attention_macs is
// incremented exactly where score/value multiply-accumulates happen, so an
// instrumented run can be compared against closed-form counts
struct PerfStats {
    double attention_seconds = 0.0;
    double total_seconds = 0.0;
    uint64_t attention_macs = 0;
    int64_t cache_positions_peak = 0;
    int64_t tokens_processed = 0;

    void reset() { *this = PerfStats{}; }
};

}  // namespace stf
