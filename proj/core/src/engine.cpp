#include "stateformer/engine.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace stf {

void diversity_filter(std::vector<char>& allowed, int64_t banned_id) {
    if (banned_id < 0 || banned_id >= int64_t(allowed.size()))
        throw std::invalid_argument("diversity_filter: banned id out of range");
    allowed[size_t(banned_id)] = 0;
}

namespace {

nlohmann::json step_to_json(const TraceStep& s) {
    return nlohmann::json{{"step_index", s.step_index}, {"pattern", s.pattern},
                          {"tokens", s.tokens},         {"alpha", s.alpha},
                          {"raw_delta_norm", s.raw_delta_norm}, {"reward", s.reward},
                          {"cache_peak", s.cache_peak}, {"ms", s.ms},
                          {"truncated", s.truncated}};
}

TraceStep step_from_json(const nlohmann::json& j) {
    TraceStep s;
    s.step_index = j.at("step_index").get<int64_t>();
    s.pattern = j.at("pattern").get<int64_t>();
    s.tokens = j.at("tokens").get<std::vector<int64_t>>();
    s.alpha = j.at("alpha").get<double>();
    s.raw_delta_norm = j.at("raw_delta_norm").get<double>();
    s.reward = j.at("reward").get<double>();
    s.cache_peak = j.at("cache_peak").get<int64_t>();
    s.ms = j.at("ms").get<double>();
    s.truncated = j.at("truncated").get<bool>();
    return s;
}

}  // namespace

std::string trace_to_json(const GenerationTrace& t) {
    nlohmann::json j;
    j["prompt"] = t.prompt;
    j["steps"] = nlohmann::json::array();
    for (const TraceStep& s : t.steps) j["steps"].push_back(step_to_json(s));
    j["answer"] = t.answer;
    j["sampled"] = t.sampled;
    j["correction"] = t.correction;
    j["diversity"] = t.diversity;
    j["alpha_max"] = t.alpha_max;
    j["t_max"] = t.t_max;
    j["seed"] = t.seed;
    j["answer_forced"] = t.answer_forced;
    j["answer_truncated"] = t.answer_truncated;
    return j.dump();
}

GenerationTrace trace_from_json(const std::string& line) {
    const nlohmann::json j = nlohmann::json::parse(line);
    GenerationTrace t;
    t.prompt = j.at("prompt").get<std::vector<int64_t>>();
    for (const auto& js : j.at("steps")) t.steps.push_back(step_from_json(js));
    t.answer = j.at("answer").get<std::vector<int64_t>>();
    t.sampled = j.at("sampled").get<bool>();
    t.correction = j.at("correction").get<bool>();
    t.diversity = j.at("diversity").get<bool>();
    t.alpha_max = j.at("alpha_max").get<double>();
    t.t_max = j.at("t_max").get<int64_t>();
    t.seed = j.at("seed").get<uint64_t>();
    t.answer_forced = j.at("answer_forced").get<bool>();
    t.answer_truncated = j.at("answer_truncated").get<bool>();
    return t;
}

void write_traces_jsonl(const std::string& path, const std::vector<GenerationTrace>& traces) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_traces_jsonl: cannot open " + path);
    for (const GenerationTrace& t : traces) f << trace_to_json(t) << "\n";
    if (!f) throw std::runtime_error("write_traces_jsonl: write failed for " + path);
}

std::vector<GenerationTrace> read_traces_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_traces_jsonl: cannot open " + path);
    std::vector<GenerationTrace> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(trace_from_json(line));
    }
    return out;
}

}  // namespace stf
