#include "stateformer/attention.hpp"

#include <stdexcept>
#include <string>

namespace stf {

void validate_spans(int64_t prompt_len, const std::vector<Span>& spans, int64_t total_len) {
    if (prompt_len < 0 || total_len < prompt_len)
        throw std::invalid_argument("spans: bad bounds, prompt_len " + std::to_string(prompt_len) +
                                    ", total_len " + std::to_string(total_len));
    int64_t cursor = prompt_len;
    for (size_t s = 0; s < spans.size(); ++s) {
        if (spans[s].begin != cursor)
            throw std::invalid_argument("spans: span " + std::to_string(s) + " begins at " +
                                        std::to_string(spans[s].begin) + ", expected " +
                                        std::to_string(cursor));
        if (spans[s].len() <= 0)
            throw std::invalid_argument("spans: span " + std::to_string(s) + " is empty");
        cursor = spans[s].end;
    }
    if (cursor != total_len)
        throw std::invalid_argument("spans: cover up to " + std::to_string(cursor) +
                                    ", expected total_len " + std::to_string(total_len));
}

Tensor segmented_mask(int64_t prompt_len, const std::vector<Span>& spans, int64_t total_len) {
    validate_spans(prompt_len, spans, total_len);
    Tensor mask({total_len, total_len}, kMaskBlocked);
    // span id per position; -1 marks prompt
    std::vector<int64_t> span_of(size_t(total_len), -1);
    for (size_t s = 0; s < spans.size(); ++s)
        for (int64_t i = spans[s].begin; i < spans[s].end; ++i) span_of[size_t(i)] = int64_t(s);
    for (int64_t i = 0; i < total_len; ++i)
        for (int64_t j = 0; j <= i; ++j)
            if (j < prompt_len || span_of[size_t(j)] == span_of[size_t(i)]) mask.at(i, j) = 0.0;
    return mask;
}

std::vector<int64_t> steplocal_positions(int64_t prompt_len, const std::vector<Span>& spans,
                                         int64_t total_len) {
    validate_spans(prompt_len, spans, total_len);
    std::vector<int64_t> pos(size_t(total_len), 0);
    for (int64_t i = 0; i < prompt_len; ++i) pos[size_t(i)] = i;
    for (const Span& s : spans)
        for (int64_t i = s.begin; i < s.end; ++i) pos[size_t(i)] = prompt_len + (i - s.begin);
    return pos;
}

}  // namespace stf
