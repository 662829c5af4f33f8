// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "saber/errors.hpp"
#include "saber/remote_backend.hpp"

namespace saber {

using nlohmann::ordered_json;

void ExperimentConfig::validate() const {
    saber.validate();
    if (gen_length == 0) {
        throw InputError("gen_length must be >= 1");
    }
    if (block_length == 0) {
        throw InputError("block_length must be >= 1");
    }
    if (seeds.empty()) {
        throw InputError("seeds must list at least one seed");
    }
    if (jobs == 0) {
        throw InputError("jobs must be >= 1");
    }
    if (timeout_ms <= 0) {
        throw InputError("timeout_ms must be positive");
    }
    const VocabSpec vocab{oracle.vocab_size, oracle.mask_id};
    vocab.validate();
    for (TokenId t : prompt) {
        if (!vocab.contains(t)) {
            throw InputError("prompt token " + std::to_string(t) + " outside vocab");
        }
    }
    if (backend == BackendKind::remote && url.empty()) {
        throw InputError("backend.url is required for the remote backend");
    }
    if (backend == BackendKind::oracle) {
        OracleParams probe;
        probe.target.assign(1, oracle.mask_id == 0 ? 1 : 0);
        probe.window = oracle.window;
        probe.base_conf = oracle.base_conf;
        probe.deceive_rate = oracle.deceive_rate;
        probe.deceive_conf = oracle.deceive_conf;
        try {
            probe.validate(vocab);
        } catch (const InputError &e) {
            throw InputError(std::string("oracle: ") + e.what());
        }
    }
    resolve_strategy(strategy, *this);
}

ordered_json ExperimentConfig::to_json() const {
    ordered_json j;
    j["strategy"] = strategy;
    ordered_json b;
    b["kind"] = backend == BackendKind::oracle ? "oracle" : "remote";
    if (backend == BackendKind::remote) {
        b["url"] = url;
        b["timeout_ms"] = timeout_ms;
    }
    j["backend"] = std::move(b);
    ordered_json o;
    o["window"] = oracle.window;
    o["base_conf"] = oracle.base_conf;
    o["deceive_rate"] = oracle.deceive_rate;
    o["deceive_conf"] = oracle.deceive_conf;
    o["vocab_size"] = oracle.vocab_size;
    o["mask_id"] = oracle.mask_id;
    j["oracle"] = std::move(o);
    j["saber"] = saber::to_json(saber);
    j["prompt"] = prompt;
    j["gen_length"] = gen_length;
    j["block_length"] = block_length;
    j["seeds"] = seeds;
    return j;
}

namespace {

[[noreturn]] void config_error(const std::string &source, const std::string &message) {
    throw InputError(source + ": " + message);
}

template <typename T>
T get_value(const toml::node &node, const std::string &key, const std::string &source) {
    if constexpr (std::is_same_v<T, bool>) {
        if (auto v = node.value_exact<bool>()) return *v;
        config_error(source, "'" + key + "' must be a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (auto v = node.value_exact<std::string>()) return *v;
        config_error(source, "'" + key + "' must be a string");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (auto v = node.value<double>()) return static_cast<T>(*v);
        config_error(source, "'" + key + "' must be a number");
    } else {
        if (auto v = node.value_exact<std::int64_t>()) {
            if constexpr (std::is_unsigned_v<T>) {
                if (*v < 0) config_error(source, "'" + key + "' must be nonnegative");
            }
            return static_cast<T>(*v);
        }
        config_error(source, "'" + key + "' must be an integer");
    }
}

template <typename T>
std::vector<T> get_int_array(const toml::node &node, const std::string &key, const std::string &source) {
    const auto *arr = node.as_array();
    if (!arr) {
        config_error(source, "'" + key + "' must be an array of integers");
    }
    std::vector<T> out;
    for (const auto &item : *arr) {
        out.push_back(get_value<T>(item, key, source));
    }
    return out;
}

void check_keys(const toml::table &table, const std::set<std::string> &allowed, const std::string &where,
                const std::string &source) {
    for (const auto &[key, _] : table) {
        if (!allowed.contains(std::string(key.str()))) {
            config_error(source, "unknown key '" + where + std::string(key.str()) + "'");
        }
    }
}

} // namespace

ExperimentConfig parse_config_toml(std::string_view text, const std::string &source) {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error &e) {
        std::ostringstream msg;
        msg << e.description() << " (line " << e.source().begin.line << ")";
        config_error(source, msg.str());
    }

    ExperimentConfig c;
    check_keys(root,
               {"strategy", "gen_length", "block_length", "seeds", "output_dir", "jobs", "prompt", "backend", "oracle",
                "saber"},
               "", source);
    for (const auto &[k, node] : root) {
        const std::string key(k.str());
        if (key == "strategy") c.strategy = get_value<std::string>(node, key, source);
        else if (key == "gen_length") c.gen_length = get_value<std::size_t>(node, key, source);
        else if (key == "block_length") c.block_length = get_value<std::size_t>(node, key, source);
        else if (key == "seeds") c.seeds = get_int_array<std::uint64_t>(node, key, source);
        else if (key == "output_dir") c.output_dir = get_value<std::string>(node, key, source);
        else if (key == "jobs") c.jobs = get_value<std::size_t>(node, key, source);
        else if (key == "prompt") c.prompt = get_int_array<TokenId>(node, key, source);
    }

    if (const auto *t = root["backend"].as_table()) {
        check_keys(*t, {"kind", "url", "timeout_ms"}, "backend.", source);
        if (auto n = t->get("kind")) {
            const auto kind = get_value<std::string>(*n, "backend.kind", source);
            if (kind == "oracle") c.backend = BackendKind::oracle;
            else if (kind == "remote") c.backend = BackendKind::remote;
            else config_error(source, "backend.kind must be 'oracle' or 'remote'");
        }
        if (auto n = t->get("url")) c.url = get_value<std::string>(*n, "backend.url", source);
        if (auto n = t->get("timeout_ms")) c.timeout_ms = get_value<std::int64_t>(*n, "backend.timeout_ms", source);
    }
    if (const auto *t = root["oracle"].as_table()) {
        check_keys(*t, {"window", "base_conf", "deceive_rate", "deceive_conf", "vocab_size", "mask_id"}, "oracle.",
                   source);
        if (auto n = t->get("window")) c.oracle.window = get_value<std::size_t>(*n, "oracle.window", source);
        if (auto n = t->get("base_conf")) c.oracle.base_conf = get_value<double>(*n, "oracle.base_conf", source);
        if (auto n = t->get("deceive_rate")) c.oracle.deceive_rate = get_value<double>(*n, "oracle.deceive_rate", source);
        if (auto n = t->get("deceive_conf")) c.oracle.deceive_conf = get_value<double>(*n, "oracle.deceive_conf", source);
        if (auto n = t->get("vocab_size")) c.oracle.vocab_size = get_value<std::int64_t>(*n, "oracle.vocab_size", source);
        if (auto n = t->get("mask_id")) c.oracle.mask_id = get_value<TokenId>(*n, "oracle.mask_id", source);
    }
    if (const auto *t = root["saber"].as_table()) {
        check_keys(*t,
                   {"mu", "c_max", "step_cap_factor", "min_net_progress", "backtracking_enabled", "adaptive_enabled",
                    "threshold_mode"},
                   "saber.", source);
        auto &s = c.saber;
        if (auto n = t->get("mu")) s.mu = get_value<int>(*n, "saber.mu", source);
        if (auto n = t->get("c_max")) s.c_max = get_value<double>(*n, "saber.c_max", source);
        if (auto n = t->get("step_cap_factor")) s.step_cap_factor = get_value<double>(*n, "saber.step_cap_factor", source);
        if (auto n = t->get("min_net_progress")) s.min_net_progress = get_value<int>(*n, "saber.min_net_progress", source);
        if (auto n = t->get("backtracking_enabled"))
            s.backtracking_enabled = get_value<bool>(*n, "saber.backtracking_enabled", source);
        if (auto n = t->get("adaptive_enabled")) s.adaptive_enabled = get_value<bool>(*n, "saber.adaptive_enabled", source);
        if (auto n = t->get("threshold_mode"))
            s.threshold_mode = parse_threshold_mode(get_value<std::string>(*n, "saber.threshold_mode", source));
    }
    return c;
}

ExperimentConfig load_config_toml(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot read config file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_toml(buf.str(), path.string());
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
    std::vector<std::uint64_t> seeds;
    while (!text.empty()) {
        const auto comma = text.find(',');
        auto item = text.substr(0, comma);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        std::uint64_t seed = 0;
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), seed);
        if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
            throw InputError("seeds: '" + std::string(item) + "' is not a nonnegative integer");
        }
        seeds.push_back(seed);
        if (comma == std::string_view::npos) {
            break;
        }
        text.remove_prefix(comma + 1);
    }
    if (seeds.empty()) {
        throw InputError("seeds: empty list");
    }
    return seeds;
}

const std::vector<std::string> &ablation_labels() {
    static const std::vector<std::string> labels = {"saber", "saber-no-accel", "saber-no-backtrack", "saber-neither",
                                                    "saber-init-mean"};
    return labels;
}

StrategySpec resolve_strategy(std::string_view label, const ExperimentConfig &config) {
    StrategySpec spec;
    spec.label = std::string(label);
    spec.saber = config.saber;

    std::string_view rest = label;
    if (rest.starts_with("sar:")) {
        spec.sar_block = config.block_length;
        rest.remove_prefix(4);
        if (rest.starts_with("sar:")) {
            throw InputError("invalid strategy '" + std::string(label) + "': nested sar");
        }
    }

    static const std::map<std::string, std::pair<bool, bool>, std::less<>> presets = {
        // {adaptive, backtracking}
        {"saber-no-accel", {false, true}},
        {"saber-no-backtrack", {true, false}},
        {"saber-neither", {false, false}},
    };
    if (auto it = presets.find(rest); it != presets.end()) {
        spec.sampler = SamplerId{SamplerKind::saber};
        spec.saber.adaptive_enabled = it->second.first;
        spec.saber.backtracking_enabled = it->second.second;
    } else if (rest == "saber-init-mean") {
        spec.sampler = SamplerId{SamplerKind::saber};
        spec.saber.threshold_mode = ThresholdMode::init_mean;
    } else {
        spec.sampler = SamplerId::parse(rest);
    }
    return spec;
}

OracleParams oracle_params_for(const ExperimentConfig &config, std::uint64_t seed) {
    const VocabSpec vocab{config.oracle.vocab_size, config.oracle.mask_id};
    OracleParams p;
    p.target = make_oracle_target(config.gen_length, vocab, seed);
    p.window = config.oracle.window;
    p.base_conf = config.oracle.base_conf;
    p.deceive_rate = config.oracle.deceive_rate;
    p.deceive_conf = config.oracle.deceive_conf;
    p.seed = seed;
    return p;
}

std::unique_ptr<Backend> make_backend(const ExperimentConfig &config, std::uint64_t seed, const std::string &run_id) {
    const VocabSpec vocab{config.oracle.vocab_size, config.oracle.mask_id};
    if (config.backend == BackendKind::oracle) {
        return std::make_unique<OracleBackend>(oracle_params_for(config, seed), vocab);
    }
    RemoteOptions options;
    options.url = config.url;
    options.run_id = run_id;
    options.timeout = std::chrono::milliseconds(config.timeout_ms);
    if (const char *token = std::getenv("SABER_REMOTE_TOKEN")) {
        options.auth_token = token;
    }
    return std::make_unique<RemoteBackend>(std::move(options));
}

std::string run_id_for(const std::string &label, std::uint64_t seed) {
    std::string id = label;
    for (char &ch : id) {
        if (ch == ':' || ch == '/' || ch == '\\' || ch == ' ') {
            ch = '_';
        }
    }
    return id + "-seed" + std::to_string(seed);
}

RunRecord run_experiment(const ExperimentConfig &config, const StrategySpec &spec, std::uint64_t seed) {
    RunRecord record;
    record.run_id = run_id_for(spec.label, seed);
    record.label = spec.label;
    record.seed = seed;

    const VocabSpec vocab{config.oracle.vocab_size, config.oracle.mask_id};
    auto backend = make_backend(config, seed, record.run_id);

    RunOptions options;
    options.run_id = record.run_id;
    options.seed = seed;
    auto effective = config.to_json();
    effective["strategy"] = spec.label;
    effective["saber"] = saber::to_json(spec.saber);
    effective.erase("seeds");
    options.meta["config"] = std::move(effective);
    if (config.backend == BackendKind::oracle) {
        options.meta["target"] = static_cast<const OracleBackend &>(*backend).params().target;
    }

    auto state = new_sequence(config.prompt, config.gen_length, vocab);
    record.result = spec.sar_block
                        ? sar_generate(std::move(state), *backend, spec.saber, *spec.sar_block, spec.sampler, options)
                        : generate(std::move(state), *backend, spec.saber, spec.sampler, options);
    record.metrics = metrics(record.result.trace);
    return record;
}

ordered_json result_file_json(const RunRecord &record) {
    ordered_json j;
    j["run_id"] = record.run_id;
    j["strategy"] = record.label;
    j["seed"] = record.seed;
    j["metrics"] = record.metrics.to_json();
    j["final_gen"] = record.result.final_state.gen();
    return j;
}

void write_run_files(const RunRecord &record, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);
    record.result.trace.write_jsonl(dir / (record.run_id + ".trace.jsonl"));
    std::ofstream out(dir / (record.run_id + ".metrics.json"), std::ios::binary | std::ios::trunc);
    out << result_file_json(record).dump(2) << '\n';
    if (!out) {
        throw Error("failed writing metrics for " + record.run_id);
    }
}

std::string comparison_csv_header() {
    return "strategy,seed,steps_used,backend_calls,mean_tokens_per_step,unmask_count,remask_count,fallback_count,"
           "completed,token_error_rate";
}

std::string comparison_csv_row(const RunRecord &record) {
    const auto &m = record.metrics;
    auto num = [](double x) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.9g", x);
        return std::string(buf);
    };
    std::ostringstream row;
    row << record.label << ',' << record.seed << ',' << m.steps_used << ',' << m.backend_calls << ','
        << num(m.mean_tokens_per_step) << ',' << m.unmask_count << ',' << m.remask_count << ',' << m.fallback_count
        << ',' << (m.completed ? "true" : "false") << ',' << (m.token_error_rate ? num(*m.token_error_rate) : "");
    return row.str();
}

namespace {

std::pair<double, double> mean_stddev(const std::vector<double> &xs) {
    if (xs.empty()) {
        return {0.0, 0.0};
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    // Sample standard deviation; 0 for a single run.
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    return {mean, sd};
}

} // namespace

std::string comparison_summary(const std::vector<RunRecord> &records) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const RunRecord *>> by_label;
    for (const auto &r : records) {
        if (!by_label.contains(r.label)) {
            order.push_back(r.label);
        }
        by_label[r.label].push_back(&r);
    }

    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %5s %20s %20s %20s\n", "strategy", "runs", "steps", "tokens/step",
                  "error rate");
    out << line;
    for (const auto &label : order) {
        std::vector<double> steps, tps, err;
        for (const auto *r : by_label[label]) {
            steps.push_back(static_cast<double>(r->metrics.steps_used));
            tps.push_back(r->metrics.mean_tokens_per_step);
            if (r->metrics.token_error_rate) err.push_back(*r->metrics.token_error_rate);
        }
        auto [sm, ss] = mean_stddev(steps);
        auto [tm, ts] = mean_stddev(tps);
        char err_buf[64] = "n/a";
        if (!err.empty()) {
            auto [em, es] = mean_stddev(err);
            std::snprintf(err_buf, sizeof err_buf, "%.4f +- %.4f", em, es);
        }
        char steps_buf[64], tps_buf[64];
        std::snprintf(steps_buf, sizeof steps_buf, "%.2f +- %.2f", sm, ss);
        std::snprintf(tps_buf, sizeof tps_buf, "%.3f +- %.3f", tm, ts);
        std::snprintf(line, sizeof line, "%-24s %5zu %20s %20s %20s\n", label.c_str(), by_label[label].size(),
                      steps_buf, tps_buf, err_buf);
        out << line;
    }
    return out.str();
}

} // namespace saber
