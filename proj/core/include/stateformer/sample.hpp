#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stateformer/attention.hpp"
#include "stateformer/rng.hpp"
#include "stateformer/weights.hpp"

namespace stf {

// closed word list; token ids are positions in `words`
struct Vocab {
    std::vector<std::string> words;
    std::unordered_map<std::string, int64_t> index;

    // the grammar vocabulary: <eos> at 0, the answer opener at 1
    static Vocab base();
    // base words plus <sK>/</sK> enclosure words for trace decoding
    static Vocab with_patterns(int64_t patterns);

    int64_t size() const { return int64_t(words.size()); }
    int64_t id(const std::string& w) const;                 // throws on unknown
    std::vector<int64_t> encode(const std::string& text) const;  // whitespace split
    std::string decode(const std::vector<int64_t>& ids) const;   // single-space join
};

struct CoTSample {
    std::string query, thinking, answer;
};

struct AnnotatedStep {
    int64_t pattern = 0;  // 1..K
    std::string text;
};

struct AnnotatedSample {
    std::string query;
    std::vector<AnnotatedStep> steps;
    std::string answer;
};

struct GrammarParams {
    double p_verify = 0.6;   // chance of a verification step after each calc
    double p_filler = 0.25;  // chance of a drifting filler step after each calc block
    int64_t modulus = 19;
};

// deterministic arithmetic-chain corpus; styles_out (when given) receives the
// planted style of every thinking step: 1 calc, 2 verify, 3 restate, 4 filler
std::vector<CoTSample> synth_corpus(uint64_t seed, int64_t n_samples, const GrammarParams& params,
                                    std::vector<std::vector<int64_t>>* styles_out = nullptr);

// ground-truth evaluation of a query string ("compute a op b op c .")
int64_t eval_query(const std::string& query, int64_t modulus = 19);
// final value named in an answer string ("thus answer is v ."), -1 if absent
int64_t parse_answer_value(const std::string& answer);

void write_corpus_jsonl(const std::string& path, const std::vector<CoTSample>& corpus);
std::vector<CoTSample> read_corpus_jsonl(const std::string& path);
void write_annotated_jsonl(const std::string& path, const std::vector<AnnotatedSample>& corpus);
std::vector<AnnotatedSample> read_annotated_jsonl(const std::string& path);

// empirical bigram model over token sequences; entropy of the next-token
// distribution in nats, 0 for unseen context tokens
class NgramScorer {
public:
    void fit(const std::vector<std::vector<int64_t>>& seqs);
    double next_entropy(int64_t token) const;
    int64_t count(int64_t token) const;

private:
    std::unordered_map<int64_t, std::unordered_map<int64_t, int64_t>> follow_;
    std::unordered_map<int64_t, int64_t> totals_;
};

// sentence-initial token types (a token right after a delimiter; the very
// first token of a text does not count), ranked by mean next-token entropy;
// keeps the top ceil(top_fraction * candidate type count) with occurrence
// count >= min_count. Deterministic order: entropy desc, then id asc.
std::vector<int64_t> extract_transition_tokens(const std::vector<std::vector<int64_t>>& thinking,
                                               const NgramScorer& scorer,
                                               const std::unordered_set<int64_t>& delimiters,
                                               double top_fraction, int64_t min_count);

// split immediately before each sentence-initial transition token; the first
// span always starts at 0 and the spans cover the sequence exactly
std::vector<Span> segment_thinking(const std::vector<int64_t>& thinking,
                                   const std::unordered_set<int64_t>& transitions,
                                   const std::unordered_set<int64_t>& delimiters);

// mean-pooled final hidden state of a vanilla forward over the step tokens,
// L2-normalized
std::vector<double> step_embedding(const ModelWeights& w, const std::vector<int64_t>& step);

struct ClusterModel {
    int64_t k = 0;
    uint64_t seed = 0;
    std::string embedding = "final-hidden-mean";
    std::vector<std::vector<double>> centroids;  // unit norm
};

void save_cluster_model(const std::string& path, const ClusterModel& m);
ClusterModel load_cluster_model(const std::string& path);

// nearest centroid by cosine; ties resolve to the lowest pattern id (1-based)
int64_t assign_pattern(const ClusterModel& m, const std::vector<double>& embedding);

// wraps each span of the tokenized thinking in its assigned pattern; spans
// must come from segment_thinking over the same token sequence
AnnotatedSample annotate(const CoTSample& sample, const std::vector<int64_t>& thinking_tokens,
                         const std::vector<Span>& spans, const ClusterModel& m,
                         const ModelWeights& w, const Vocab& vocab);

// concatenated step texts; the identity on the thinking region by contract
std::string strip_annotations(const AnnotatedSample& s);

// best-permutation agreement between two pattern labelings with ids 1..K
double pattern_agreement(const std::vector<int64_t>& truth, const std::vector<int64_t>& assigned,
                         int64_t k);

// training-side token layout of an annotated sample: prompt tokens, then each
// step wrapped in its enclosure pair, then the answer region ending in <eos>
struct TrainSequence {
    std::vector<int64_t> tokens;
    int64_t prompt_len = 0;
    std::vector<Span> spans;  // steps plus the final answer span
};

TrainSequence build_train_sequence(const AnnotatedSample& s, const Vocab& vocab,
                                   const ModelConfig& cfg);

}  // namespace stf
