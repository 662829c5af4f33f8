// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/cli.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "saber/errors.hpp"
#include "saber/telemetry.hpp"

namespace saber::cli {

using nlohmann::ordered_json;

namespace {

int report_failure(const std::exception_ptr &failure, std::ostream &err) {
    try {
        std::rethrow_exception(failure);
    } catch (const AbortedRunError &e) {
        err << "error: " << e.what() << '\n';
        return kBackend;
    } catch (const BackendError &e) {
        err << "error: " << e.what() << '\n';
        return kBackend;
    } catch (const CorruptTraceError &e) {
        err << "error: corrupt trace: " << e.what() << '\n';
        return kCorruptTrace;
    } catch (const InputError &e) {
        err << "error: invalid configuration: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kBackend;
    }
}

std::string summary_row(const RunRecord &r) {
    const auto &m = r.metrics;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s steps=%-5zu calls=%-5zu tokens/step=%-7.3f remasks=%-4zu completed=%s%s",
                  r.run_id.c_str(), m.steps_used, m.backend_calls, m.mean_tokens_per_step, m.remask_count,
                  m.completed ? "yes" : "no",
                  m.token_error_rate ? (" error_rate=" + std::to_string(*m.token_error_rate)).c_str() : "");
    return buf;
}

// Runs every job, at most `jobs` at a time. Returns one record per job in
// order, or rethrows the first failure after preserving partial traces.
std::vector<RunRecord> run_all(const ExperimentConfig &config,
                               const std::vector<std::pair<StrategySpec, std::uint64_t>> &work) {
    std::vector<RunRecord> records(work.size());
    std::vector<std::exception_ptr> failures(work.size());
    std::atomic<std::size_t> next{0};
    std::mutex io;

    auto worker = [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) {
            const auto &[spec, seed] = work[i];
            try {
                records[i] = run_experiment(config, spec, seed);
                write_run_files(records[i], config.output_dir);
            } catch (const AbortedRunError &e) {
                std::filesystem::create_directories(config.output_dir);
                e.partial_trace().write_jsonl(config.output_dir / (run_id_for(spec.label, seed) + ".trace.jsonl"));
                failures[i] = std::current_exception();
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };

    const std::size_t threads = std::min(config.jobs, work.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back(worker);
        }
    }
    for (const auto &f : failures) {
        if (f) {
            std::rethrow_exception(f);
        }
    }
    return records;
}

} // namespace

int cmd_generate(const ExperimentConfig &config, std::ostream &out, std::ostream &err) {
    try {
        config.validate();
        const auto spec = resolve_strategy(config.strategy, config);
        std::vector<std::pair<StrategySpec, std::uint64_t>> work;
        for (auto seed : config.seeds) {
            work.emplace_back(spec, seed);
        }
        for (const auto &record : run_all(config, work)) {
            out << summary_row(record) << '\n';
        }
        return kOk;
    } catch (...) {
        return report_failure(std::current_exception(), err);
    }
}

int cmd_compare(const ExperimentConfig &config, const std::vector<std::string> &strategies, std::ostream &out,
                std::ostream &err) {
    try {
        config.validate();
        if (strategies.empty()) {
            throw InputError("compare needs at least one strategy");
        }
        std::vector<std::pair<StrategySpec, std::uint64_t>> work;
        for (const auto &label : strategies) {
            const auto spec = resolve_strategy(label, config);
            for (auto seed : config.seeds) {
                work.emplace_back(spec, seed);
            }
        }
        const auto records = run_all(config, work);

        std::ofstream csv(config.output_dir / "comparison.csv", std::ios::binary | std::ios::trunc);
        csv << comparison_csv_header() << '\n';
        for (const auto &r : records) {
            csv << comparison_csv_row(r) << '\n';
        }
        if (!csv) {
            throw Error("failed writing comparison.csv");
        }
        out << comparison_summary(records);
        return kOk;
    } catch (...) {
        return report_failure(std::current_exception(), err);
    }
}

int cmd_replay(const std::filesystem::path &trace_path, const std::optional<std::filesystem::path> &verify,
               std::ostream &out, std::ostream &err) {
    try {
        const Trace trace = Trace::read_jsonl(trace_path);
        if (!trace.run_meta()) {
            throw CorruptTraceError("no run_meta event", 1);
        }
        if (!trace.run_end()) {
            throw CorruptTraceError("trace ends without a run_end event (truncated?)", trace.size() + 1);
        }
        const SequenceState state = replay(trace);
        const RunMetrics m = metrics(trace);
        if (m.unmask_count - m.remask_count != state.unmasked_count()) {
            throw CorruptTraceError("unmask/remask counts disagree with the replayed state");
        }
        if (m.completed != state.complete()) {
            throw CorruptTraceError("run_end completion flag disagrees with the replayed state", trace.size());
        }

        ordered_json report;
        report["final_gen"] = state.gen();
        report["metrics"] = m.to_json();
        out << report.dump(2) << '\n';

        if (verify) {
            std::ifstream in(*verify, std::ios::binary);
            if (!in) {
                throw InputError("cannot read result file " + verify->string());
            }
            ordered_json live;
            try {
                live = ordered_json::parse(in);
            } catch (const ordered_json::exception &e) {
                throw InputError("result file " + verify->string() + " is not valid JSON: " + e.what());
            }
            const bool gen_ok = live.value("final_gen", ordered_json()) == report["final_gen"];
            const bool metrics_ok = live.value("metrics", ordered_json()) == report["metrics"];
            out << "verify: " << (gen_ok && metrics_ok ? "match" : "MISMATCH");
            if (!gen_ok) out << " (final sequence differs)";
            if (!metrics_ok) out << " (metrics differ)";
            out << '\n';
            return gen_ok && metrics_ok ? kOk : kMismatch;
        }
        return kOk;
    } catch (...) {
        return report_failure(std::current_exception(), err);
    }
}

namespace {

struct Overrides {
    std::string config_path;
    std::string strategy, backend, url, seeds, output_dir, threshold_mode, prompt;
    std::int64_t timeout_ms = 0;
    std::size_t gen_length = 0, block_length = 0, jobs = 0, window = 0;
    int mu = 0, min_net_progress = 0;
    double c_max = 0, step_cap_factor = 0, base_conf = 0, deceive_rate = 0, deceive_conf = 0;
    bool backtracking = true, adaptive = true;
    std::int64_t vocab_size = 0;
    TokenId mask_id = 0;
};

void add_experiment_options(CLI::App &cmd, Overrides &o) {
    cmd.add_option("--config", o.config_path, "TOML config file; flags override its values");
    cmd.add_option("--strategy", o.strategy, "sampler label, e.g. saber, confidence, confidence_p:4, sar:saber");
    cmd.add_option("--backend", o.backend, "oracle or remote");
    cmd.add_option("--url", o.url, "remote backend base URL");
    cmd.add_option("--timeout-ms", o.timeout_ms, "remote request timeout");
    cmd.add_option("--seeds", o.seeds, "comma-separated seeds");
    cmd.add_option("--gen-length", o.gen_length);
    cmd.add_option("--block-length", o.block_length, "block size for sar:* strategies");
    cmd.add_option("--output-dir", o.output_dir);
    cmd.add_option("--jobs", o.jobs, "runs executed in parallel");
    cmd.add_option("--prompt", o.prompt, "comma-separated prompt token ids");
    cmd.add_option("--mu", o.mu);
    cmd.add_option("--c-max", o.c_max);
    cmd.add_option("--step-cap-factor", o.step_cap_factor);
    cmd.add_option("--min-net-progress", o.min_net_progress);
    cmd.add_option("--backtracking", o.backtracking, "true/false");
    cmd.add_option("--adaptive", o.adaptive, "true/false");
    cmd.add_option("--threshold-mode", o.threshold_mode, "running_mean or init_mean");
    cmd.add_option("--window", o.window, "oracle context radius");
    cmd.add_option("--base-conf", o.base_conf);
    cmd.add_option("--deceive-rate", o.deceive_rate);
    cmd.add_option("--deceive-conf", o.deceive_conf);
    cmd.add_option("--vocab-size", o.vocab_size);
    cmd.add_option("--mask-id", o.mask_id);
}

ExperimentConfig merge_config(const CLI::App &cmd, const Overrides &o) {
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config_toml(o.config_path);
    auto given = [&](const char *flag) { return cmd.count(flag) > 0; };
    if (given("--strategy")) c.strategy = o.strategy;
    if (given("--backend")) {
        if (o.backend == "oracle") c.backend = BackendKind::oracle;
        else if (o.backend == "remote") c.backend = BackendKind::remote;
        else throw InputError("backend must be 'oracle' or 'remote', got '" + o.backend + "'");
    }
    if (given("--url")) c.url = o.url;
    if (given("--timeout-ms")) c.timeout_ms = o.timeout_ms;
    if (given("--seeds")) c.seeds = parse_seed_list(o.seeds);
    if (given("--gen-length")) c.gen_length = o.gen_length;
    if (given("--block-length")) c.block_length = o.block_length;
    if (given("--output-dir")) c.output_dir = o.output_dir;
    if (given("--jobs")) c.jobs = o.jobs;
    if (given("--prompt")) {
        c.prompt.clear();
        for (auto id : parse_seed_list(o.prompt)) {
            c.prompt.push_back(static_cast<TokenId>(id));
        }
    }
    if (given("--mu")) c.saber.mu = o.mu;
    if (given("--c-max")) c.saber.c_max = o.c_max;
    if (given("--step-cap-factor")) c.saber.step_cap_factor = o.step_cap_factor;
    if (given("--min-net-progress")) c.saber.min_net_progress = o.min_net_progress;
    if (given("--backtracking")) c.saber.backtracking_enabled = o.backtracking;
    if (given("--adaptive")) c.saber.adaptive_enabled = o.adaptive;
    if (given("--threshold-mode")) c.saber.threshold_mode = parse_threshold_mode(o.threshold_mode);
    if (given("--window")) c.oracle.window = o.window;
    if (given("--base-conf")) c.oracle.base_conf = o.base_conf;
    if (given("--deceive-rate")) c.oracle.deceive_rate = o.deceive_rate;
    if (given("--deceive-conf")) c.oracle.deceive_conf = o.deceive_conf;
    if (given("--vocab-size")) c.oracle.vocab_size = o.vocab_size;
    if (given("--mask-id")) c.oracle.mask_id = o.mask_id;
    return c;
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Adaptive-threshold / backtracking sampler for masked diffusion language models", "saber"};
    app.require_subcommand(1);

    Overrides gen_opts;
    auto *generate_cmd = app.add_subcommand("generate", "run one generation per seed, writing traces and metrics");
    add_experiment_options(*generate_cmd, gen_opts);

    Overrides cmp_opts;
    std::string strategies;
    bool ablate = false;
    auto *compare_cmd = app.add_subcommand("compare", "run strategies x seeds and write comparison.csv");
    add_experiment_options(*compare_cmd, cmp_opts);
    compare_cmd->add_option("--strategies", strategies, "comma-separated strategy labels");
    compare_cmd->add_flag("--ablate", ablate, "add the ablation suite (full, no-accel, no-backtrack, neither, init-mean)");

    std::string trace_path;
    std::string verify_path;
    auto *replay_cmd = app.add_subcommand("replay", "replay a trace and check it");
    replay_cmd->add_option("trace", trace_path, "path to <run_id>.trace.jsonl")->required();
    replay_cmd->add_option("--verify", verify_path, "compare against a <run_id>.metrics.json result file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*generate_cmd) {
            return cmd_generate(merge_config(*generate_cmd, gen_opts), out, err);
        }
        if (*compare_cmd) {
            auto config = merge_config(*compare_cmd, cmp_opts);
            std::vector<std::string> labels;
            if (ablate) {
                labels = ablation_labels();
            }
            std::string_view rest = strategies;
            while (!rest.empty()) {
                const auto comma = rest.find(',');
                std::string label(rest.substr(0, comma));
                if (!label.empty() && std::find(labels.begin(), labels.end(), label) == labels.end()) {
                    labels.push_back(std::move(label));
                }
                if (comma == std::string_view::npos) break;
                rest.remove_prefix(comma + 1);
            }
            if (labels.empty()) {
                labels.push_back(config.strategy);
            }
            return cmd_compare(config, labels, out, err);
        }
        std::optional<std::filesystem::path> verify;
        if (!verify_path.empty()) {
            verify = verify_path;
        }
        return cmd_replay(trace_path, verify, out, err);
    } catch (...) {
        return report_failure(std::current_exception(), err);
    }
}

} // namespace saber::cli
