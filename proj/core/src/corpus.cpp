#include "stateformer/sample.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "stateformer/model_forward.hpp"

namespace stf {

namespace {

using nlohmann::json;

const char* kBaseWords[] = {
    "<eos>", "thus",     "plus",     "minus",  "times",  "wait",    "hmm",
    "alternatively",     "maybe",    "compute", "now",   "gives",   "check",
    "comes", "from",     "ok",       "so",     "far",    "value",   "stands",
    "at",    "drifting", "thoughts", "wander", "off",    "topic",   "briefly",
    "drifts", "answer",  "is",       "."};

int64_t parse_num(const std::string& w) {
    if (w.empty()) return -1;
    for (char c : w)
        if (c < '0' || c > '9') return -1;
    return std::stoll(w);
}

int64_t op_apply(int64_t a, const std::string& op, int64_t b, int64_t m) {
    if (op == "plus") return (a + b) % m;
    if (op == "minus") return ((a - b) % m + m) % m;
    if (op == "times") return (a * b) % m;
    throw std::invalid_argument("op_apply: unknown operator '" + op + "'");
}

std::string num(int64_t v) { return std::to_string(v); }

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    return f;
}

}  // namespace

Vocab Vocab::base() {
    Vocab v;
    for (const char* w : kBaseWords) v.words.push_back(w);
    for (int64_t i = 0; i < 19; ++i) v.words.push_back(std::to_string(i));
    for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = int64_t(i);
    return v;
}

Vocab Vocab::with_patterns(int64_t patterns) {
    Vocab v = base();
    for (int64_t k = 1; k <= patterns; ++k) {
        v.words.push_back("<s" + std::to_string(k) + ">");
        v.words.push_back("</s" + std::to_string(k) + ">");
    }
    v.index.clear();
    for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = int64_t(i);
    return v;
}

int64_t Vocab::id(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end()) throw std::invalid_argument("Vocab: unknown word '" + w + "'");
    return it->second;
}

std::vector<int64_t> Vocab::encode(const std::string& text) const {
    std::vector<int64_t> ids;
    std::istringstream in(text);
    std::string w;
    while (in >> w) ids.push_back(id(w));
    return ids;
}

std::string Vocab::decode(const std::vector<int64_t>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= size())
            throw std::invalid_argument("Vocab: id out of range: " + std::to_string(ids[i]));
        if (i) out += ' ';
        out += words[size_t(ids[i])];
    }
    return out;
}

std::vector<CoTSample> synth_corpus(uint64_t seed, int64_t n_samples, const GrammarParams& params,
                                    std::vector<std::vector<int64_t>>* styles_out) {
    if (n_samples < 1) throw std::invalid_argument("synth_corpus: need at least one sample");
    if (params.modulus < 2 || params.modulus > 19)
        throw std::invalid_argument("synth_corpus: modulus outside the number vocabulary");
    Rng rng(seed);
    const char* markers[] = {"wait", "hmm", "alternatively", "maybe"};
    const char* ops[] = {"plus", "minus", "times"};
    const int64_t m = params.modulus;

    auto marker = [&]() { return std::string(markers[rng.next_index(4)]); };
    auto step = [&](const std::string& body) { return marker() + " " + body + " ."; };
    auto calc = [&](int64_t a, const std::string& op, int64_t b, int64_t r) {
        return step("now " + num(a) + " " + op + " " + num(b) + " gives " + num(r));
    };
    auto verify = [&](int64_t r, int64_t a, const std::string& op, int64_t b) {
        return step("check " + num(r) + " comes from " + num(a) + " " + op + " " + num(b) + " ok");
    };
    auto filler = [&]() {
        return rng.next_double() < 0.5
                   ? step("drifting thoughts wander off briefly")
                   : step("drifting thoughts wander off . topic drifts briefly");
    };

    std::vector<CoTSample> corpus;
    if (styles_out) styles_out->clear();
    for (int64_t s = 0; s < n_samples; ++s) {
        const int64_t a = int64_t(rng.next_index(size_t(m)));
        const int64_t b = int64_t(rng.next_index(size_t(m)));
        const int64_t c = int64_t(rng.next_index(size_t(m)));
        const std::string op1 = ops[rng.next_index(3)];
        const std::string op2 = ops[rng.next_index(3)];
        const int64_t v1 = op_apply(a, op1, b, m);
        const int64_t v2 = op_apply(v1, op2, c, m);

        std::vector<std::string> steps;
        std::vector<int64_t> styles;
        auto push = [&](const std::string& text, int64_t style) {
            steps.push_back(text);
            styles.push_back(style);
        };
        push(calc(a, op1, b, v1), 1);
        if (rng.next_double() < params.p_verify) push(verify(v1, a, op1, b), 2);
        if (rng.next_double() < params.p_filler) push(filler(), 4);
        push(calc(v1, op2, c, v2), 1);
        if (rng.next_double() < params.p_verify) push(verify(v2, v1, op2, c), 2);
        if (rng.next_double() < params.p_filler) push(filler(), 4);
        push(step("so far value stands at " + num(v2)), 3);

        CoTSample sample;
        sample.query = "compute " + num(a) + " " + op1 + " " + num(b) + " " + op2 + " " +
                       num(c) + " .";
        std::string thinking;
        for (size_t i = 0; i < steps.size(); ++i) {
            if (i) thinking += ' ';
            thinking += steps[i];
        }
        sample.thinking = thinking;
        sample.answer = "thus answer is " + num(v2) + " .";
        corpus.push_back(sample);
        if (styles_out) styles_out->push_back(styles);
    }
    return corpus;
}

int64_t eval_query(const std::string& query, int64_t modulus) {
    std::istringstream in(query);
    std::vector<std::string> toks;
    std::string w;
    while (in >> w) toks.push_back(w);
    if (toks.size() != 7 || toks[0] != "compute" || toks[6] != ".")
        throw std::invalid_argument("eval_query: malformed query '" + query + "'");
    const int64_t a = parse_num(toks[1]);
    const int64_t b = parse_num(toks[3]);
    const int64_t c = parse_num(toks[5]);
    if (a < 0 || b < 0 || c < 0)
        throw std::invalid_argument("eval_query: malformed operand in '" + query + "'");
    return op_apply(op_apply(a, toks[2], b, modulus), toks[4], c, modulus);
}

int64_t parse_answer_value(const std::string& answer) {
    std::istringstream in(answer);
    std::string w, prev;
    while (in >> w) {
        if (prev == "is") return parse_num(w);
        prev = w;
    }
    return -1;
}

void write_corpus_jsonl(const std::string& path, const std::vector<CoTSample>& corpus) {
    auto f = open_out(path);
    for (const auto& s : corpus) {
        json j{{"query", s.query}, {"thinking", s.thinking}, {"answer", s.answer}};
        f << j.dump() << "\n";
    }
}

std::vector<CoTSample> read_corpus_jsonl(const std::string& path) {
    auto f = open_in(path);
    std::vector<CoTSample> corpus;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        CoTSample s;
        s.query = j.at("query").get<std::string>();
        s.thinking = j.at("thinking").get<std::string>();
        s.answer = j.at("answer").get<std::string>();
        corpus.push_back(s);
    }
    return corpus;
}

void write_annotated_jsonl(const std::string& path, const std::vector<AnnotatedSample>& corpus) {
    auto f = open_out(path);
    for (const auto& s : corpus) {
        json steps = json::array();
        for (const auto& st : s.steps) steps.push_back({{"pattern", st.pattern}, {"text", st.text}});
        json j{{"query", s.query}, {"steps", steps}, {"answer", s.answer}};
        f << j.dump() << "\n";
    }
}

std::vector<AnnotatedSample> read_annotated_jsonl(const std::string& path) {
    auto f = open_in(path);
    std::vector<AnnotatedSample> corpus;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        AnnotatedSample s;
        s.query = j.at("query").get<std::string>();
        s.answer = j.at("answer").get<std::string>();
        for (const auto& st : j.at("steps")) {
            AnnotatedStep a;
            a.pattern = st.at("pattern").get<int64_t>();
            a.text = st.at("text").get<std::string>();
            s.steps.push_back(a);
        }
        corpus.push_back(s);
    }
    return corpus;
}

void NgramScorer::fit(const std::vector<std::vector<int64_t>>& seqs) {
    follow_.clear();
    totals_.clear();
    for (const auto& seq : seqs)
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            follow_[seq[i]][seq[i + 1]] += 1;
            totals_[seq[i]] += 1;
        }
}

double NgramScorer::next_entropy(int64_t token) const {
    auto it = follow_.find(token);
    if (it == follow_.end()) return 0.0;
    const auto tot = totals_.at(token);
    double h = 0.0;
    for (const auto& [next, cnt] : it->second) {
        (void)next;
        const double p = double(cnt) / double(tot);
        h -= p * std::log(p);
    }
    return h;
}

int64_t NgramScorer::count(int64_t token) const {
    auto it = totals_.find(token);
    return it == totals_.end() ? 0 : it->second;
}

std::vector<int64_t> extract_transition_tokens(const std::vector<std::vector<int64_t>>& thinking,
                                               const NgramScorer& scorer,
                                               const std::unordered_set<int64_t>& delimiters,
                                               double top_fraction, int64_t min_count) {
    if (!(top_fraction > 0.0) || top_fraction > 1.0)
        throw std::invalid_argument("extract_transition_tokens: top_fraction outside (0, 1]");
    if (min_count < 1) throw std::invalid_argument("extract_transition_tokens: min_count < 1");
    size_t total_tokens = 0;
    for (const auto& seq : thinking) total_tokens += seq.size();
    if (thinking.empty() || total_tokens == 0)
        throw std::invalid_argument("extract_transition_tokens: empty corpus");

    std::unordered_map<int64_t, int64_t> initial_count;
    for (const auto& seq : thinking)
        for (size_t p = 1; p < seq.size(); ++p)
            if (delimiters.count(seq[p - 1])) initial_count[seq[p]] += 1;

    std::vector<std::pair<double, int64_t>> ranked;
    for (const auto& [tok, cnt] : initial_count)
        if (cnt >= min_count) ranked.push_back({scorer.next_entropy(tok), tok});
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    const size_t keep = size_t(std::ceil(top_fraction * double(ranked.size())));
    std::vector<int64_t> out;
    for (size_t i = 0; i < keep && i < ranked.size(); ++i) out.push_back(ranked[i].second);
    return out;
}

std::vector<Span> segment_thinking(const std::vector<int64_t>& thinking,
                                   const std::unordered_set<int64_t>& transitions,
                                   const std::unordered_set<int64_t>& delimiters) {
    if (thinking.empty()) throw std::invalid_argument("segment_thinking: empty sequence");
    if (transitions.empty()) throw std::invalid_argument("segment_thinking: no transition tokens");
    std::vector<int64_t> starts{0};
    for (size_t p = 1; p < thinking.size(); ++p)
        if (transitions.count(thinking[p]) && delimiters.count(thinking[p - 1]))
            starts.push_back(int64_t(p));
    std::vector<Span> spans;
    for (size_t i = 0; i < starts.size(); ++i) {
        const int64_t end = i + 1 < starts.size() ? starts[i + 1] : int64_t(thinking.size());
        spans.push_back({starts[i], end});
    }
    return spans;
}

std::vector<double> step_embedding(const ModelWeights& w, const std::vector<int64_t>& step) {
    if (step.empty()) throw std::invalid_argument("step_embedding: empty step");
    Tensor hidden;
    model_forward(w, step, int64_t(step.size()), {}, ForwardOptions::vanilla(), nullptr, &hidden);
    const int64_t d = hidden.cols();
    std::vector<double> emb(static_cast<size_t>(d), 0.0);
    for (int64_t r = 0; r < hidden.rows(); ++r)
        for (int64_t c = 0; c < d; ++c) emb[size_t(c)] += hidden.at(r, c);
    double ss = 0.0;
    for (double& x : emb) {
        x /= double(hidden.rows());
        ss += x * x;
    }
    const double norm = std::sqrt(ss);
    if (!(norm > 1e-12)) throw std::runtime_error("step_embedding: degenerate hidden state");
    for (double& x : emb) x /= norm;
    return emb;
}

void save_cluster_model(const std::string& path, const ClusterModel& m) {
    auto f = open_out(path);
    json j{{"k", m.k}, {"seed", m.seed}, {"embedding", m.embedding}, {"centroids", m.centroids}};
    f << j.dump(2) << "\n";
}

ClusterModel load_cluster_model(const std::string& path) {
    auto f = open_in(path);
    json j = json::parse(f);
    ClusterModel m;
    m.k = j.at("k").get<int64_t>();
    m.seed = j.at("seed").get<uint64_t>();
    m.embedding = j.at("embedding").get<std::string>();
    m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    if (m.k < 1 || int64_t(m.centroids.size()) != m.k)
        throw std::runtime_error("load_cluster_model: centroid count does not match k");
    return m;
}

int64_t assign_pattern(const ClusterModel& m, const std::vector<double>& embedding) {
    if (m.centroids.empty()) throw std::invalid_argument("assign_pattern: empty model");
    int64_t best = 0;
    double best_sim = -2.0;
    for (size_t k = 0; k < m.centroids.size(); ++k) {
        const auto& c = m.centroids[k];
        if (c.size() != embedding.size())
            throw std::invalid_argument("assign_pattern: dimension mismatch");
        double dot = 0.0;
        for (size_t i = 0; i < c.size(); ++i) dot += c[i] * embedding[i];
        if (dot > best_sim) {
            best_sim = dot;
            best = int64_t(k);
        }
    }
    return best + 1;
}

AnnotatedSample annotate(const CoTSample& sample, const std::vector<int64_t>& thinking_tokens,
                         const std::vector<Span>& spans, const ClusterModel& m,
                         const ModelWeights& w, const Vocab& vocab) {
    if (spans.empty()) throw std::invalid_argument("annotate: no spans");
    int64_t cursor = 0;
    AnnotatedSample out;
    out.query = sample.query;
    out.answer = sample.answer;
    for (const Span& sp : spans) {
        if (sp.begin != cursor || sp.len() < 1 || sp.end > int64_t(thinking_tokens.size()))
            throw std::invalid_argument("annotate: spans do not partition the thinking tokens");
        cursor = sp.end;
        std::vector<int64_t> toks(thinking_tokens.begin() + sp.begin,
                                  thinking_tokens.begin() + sp.end);
        AnnotatedStep st;
        st.text = vocab.decode(toks);
        st.pattern = assign_pattern(m, step_embedding(w, toks));
        out.steps.push_back(st);
    }
    if (cursor != int64_t(thinking_tokens.size()))
        throw std::invalid_argument("annotate: spans do not cover the thinking tokens");
    return out;
}

std::string strip_annotations(const AnnotatedSample& s) {
    std::string out;
    for (size_t i = 0; i < s.steps.size(); ++i) {
        if (i) out += ' ';
        out += s.steps[i].text;
    }
    return out;
}

double pattern_agreement(const std::vector<int64_t>& truth, const std::vector<int64_t>& assigned,
                         int64_t k) {
    if (k < 1 || k > 8) throw std::invalid_argument("pattern_agreement: k outside 1..8");
    if (truth.size() != assigned.size() || truth.empty())
        throw std::invalid_argument("pattern_agreement: label lists empty or mismatched");
    for (size_t i = 0; i < truth.size(); ++i)
        if (truth[i] < 1 || truth[i] > k || assigned[i] < 1 || assigned[i] > k)
            throw std::invalid_argument("pattern_agreement: label outside 1..k");
    std::vector<int64_t> perm(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i) perm[size_t(i)] = i + 1;
    int64_t best = 0;
    do {
        int64_t hits = 0;
        for (size_t i = 0; i < truth.size(); ++i)
            if (perm[size_t(assigned[i] - 1)] == truth[i]) ++hits;
        best = std::max(best, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return double(best) / double(truth.size());
}

TrainSequence build_train_sequence(const AnnotatedSample& s, const Vocab& vocab,
                                   const ModelConfig& cfg) {
    SpecialTokenTable st(cfg);
    TrainSequence ts;
    ts.tokens = vocab.encode(s.query);
    ts.prompt_len = int64_t(ts.tokens.size());
    if (ts.prompt_len < 1) throw std::invalid_argument("build_train_sequence: empty query");
    for (const auto& step : s.steps) {
        const int64_t begin = int64_t(ts.tokens.size());
        ts.tokens.push_back(st.start_id(step.pattern));
        const auto body = vocab.encode(step.text);
        ts.tokens.insert(ts.tokens.end(), body.begin(), body.end());
        ts.tokens.push_back(st.end_id(step.pattern));
        ts.spans.push_back({begin, int64_t(ts.tokens.size())});
    }
    const int64_t begin = int64_t(ts.tokens.size());
    const auto ans = vocab.encode(s.answer);
    if (ans.empty()) throw std::invalid_argument("build_train_sequence: empty answer");
    ts.tokens.insert(ts.tokens.end(), ans.begin(), ans.end());
    ts.tokens.push_back(cfg.eos_id);
    ts.spans.push_back({begin, int64_t(ts.tokens.size())});
    return ts;
}

}  // namespace stf
