// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails, including its runtime bound.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saber/cli.hpp"
#include "saber/experiment.hpp"
#include "saber/generation.hpp"
#include "saber/samplers.hpp"
#include "saber/telemetry.hpp"
#include "support/scripted_backend.hpp"

namespace {

using namespace saber;
namespace fs = std::filesystem;

struct Verdict {
    bool pass = false;
    std::string detail;
};

// Every run produced by the suites below, for the replay fidelity check.
std::vector<GenerationResult> g_runs;

int g_failures = 0;

void criterion(const char *name, double max_seconds, const std::function<Verdict()> &body) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception &e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > max_seconds) {
        v.pass = false;
        v.detail += " [over time budget]";
    }
    std::printf("%s  %-24s %s (%.2f s, limit %.0f s)\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str(), secs,
                max_seconds);
    std::fflush(stdout);
    g_failures += v.pass ? 0 : 1;
}

std::string fmt(const char *f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// Threshold, remask budget, confidence drops and the set update, each checked
// against a direct restatement.
Verdict formula_exactness() {
    std::size_t checks = 0, bad = 0;
    auto expect = [&](bool ok) {
        ++checks;
        bad += ok ? 0 : 1;
    };
    const VocabSpec vocab = testing::kVocab;
    std::mt19937_64 rng(2025);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Threshold: c_max on an empty ledger, otherwise the ledger mean.
    for (double c_max : {0.5, 0.9, 1.0}) {
        SaberConfig cfg;
        cfg.c_max = c_max;
        expect(compute_threshold(new_sequence({}, 8, vocab), cfg) == c_max);
    }
    for (int trial = 0; trial < 300; ++trial) {
        auto s = new_sequence({}, 64, vocab);
        long double sum = 0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < 64; ++i) {
            if (rng() % 2) {
                const double c = unit(rng);
                apply_unmask(s, i, 1, c);
                sum += c;
                ++n;
            }
        }
        if (n == 0) continue;
        expect(std::abs(compute_threshold(s, SaberConfig{}) - static_cast<double>(sum / n)) <= 1e-12);
    }

    // Budget over |D| in 0..64 and mu in {1,2,4,8}.
    for (int mu : {1, 2, 4, 8}) {
        SaberConfig cfg;
        cfg.mu = mu;
        for (std::size_t d = 0; d <= 64; ++d) {
            std::size_t groups = 0;
            for (std::size_t k = 1; k * static_cast<std::size_t>(mu) <= d; ++k) groups = k;
            expect(compute_remask_budget(d, cfg) == std::max<std::size_t>(1, groups));
        }
    }

    // Drops are plain differences, negative ones included.
    for (int trial = 0; trial < 200; ++trial) {
        auto s = new_sequence({}, 16, vocab);
        std::vector<double> cur(16, 0.0), top(16, 0.5);
        for (std::size_t i = 0; i < 16; ++i) {
            if (rng() % 2) {
                apply_unmask(s, i, 1, unit(rng));
                cur[i] = unit(rng);
            }
        }
        const auto drops = compute_confidence_drops(s, testing::make_preds(s, top, cur));
        expect(drops.size() == s.unmasked_count());
        for (const auto &[j, d] : drops) expect(std::abs(d - (s.ledger().at(j) - cur[j])) <= 1e-12);
    }

    // U_t = (U_{t-1} + D_t) - R_t on random scripted runs.
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        for (auto mode : {testing::Adversary::none, testing::Adversary::all_drops}) {
            testing::HashedBackend backend(seed, mode);
            auto s = new_sequence({}, 24, vocab);
            SaberRunContext ctx;
            for (int step = 0; step < 48 && !s.complete(); ++step) {
                const auto before = s.unmasked_indices();
                const auto out = saber_step(s, backend, SaberConfig{}, ctx);
                std::set<std::size_t> expected(before.begin(), before.end());
                for (const auto &d : out.drafted) expected.insert(d.index);
                for (auto j : out.remasked) expected.erase(j);
                const auto after = s.unmasked_indices();
                expect(std::set<std::size_t>(after.begin(), after.end()) == expected);
            }
        }
    }
    return {bad == 0, std::to_string(checks - bad) + "/" + std::to_string(checks) + " checks exact"};
}

Verdict greedy_equivalence() {
    ExperimentConfig config;
    config.gen_length = 32;
    std::size_t same = 0;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        auto greedy = run_experiment(config, resolve_strategy("saber-neither", config), seed);
        auto baseline = run_experiment(config, resolve_strategy("confidence", config), seed);
        same += greedy.result.final_state.gen() == baseline.result.final_state.gen() ? 1 : 0;
        g_runs.push_back(std::move(greedy.result));
        g_runs.push_back(std::move(baseline.result));
    }
    return {same == 200, std::to_string(same) + "/200 token-identical"};
}

Verdict termination() {
    std::mt19937_64 rng(77);
    const testing::Adversary modes[] = {testing::Adversary::none, testing::Adversary::single_draft,
                                        testing::Adversary::all_drops, testing::Adversary::single_and_drops};
    std::size_t ok = 0, adversarial = 0;
    for (int instance = 0; instance < 500; ++instance) {
        const auto mode = modes[instance % 4];
        adversarial += mode != testing::Adversary::none;
        const std::size_t length = 1 + rng() % 64;
        SaberConfig cfg;
        cfg.mu = 1 << (rng() % 4);
        testing::HashedBackend backend(rng(), mode);
        auto r = generate(new_sequence({}, length, testing::kVocab), backend, cfg, SamplerId{SamplerKind::saber});
        const auto cap = static_cast<std::size_t>(std::ceil(2.0 * static_cast<double>(length)));
        ok += r.steps_used <= cap ? 1 : 0;
        g_runs.push_back(std::move(r));
    }
    return {ok == 500,
            std::to_string(ok) + "/500 within ceil(2L) steps (" + std::to_string(adversarial) + " adversarial)"};
}

Verdict confidence_rises_with_context() {
    ExperimentConfig config;
    config.gen_length = 64;
    config.oracle.deceive_rate = 0.1;
    std::size_t rising = 0;
    double min_rho = 1.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto rec = run_experiment(config, resolve_strategy("confidence", config), seed);
        const double rho = spearman_vs_index(rec.metrics.per_step_mean_confidence);
        rising += rho > 0.5 ? 1 : 0;
        min_rho = std::min(min_rho, rho);
        g_runs.push_back(std::move(rec.result));
    }
    return {rising >= 18, std::to_string(rising) + "/20 seeds with rho > 0.5 (need 18), min rho " +
                              fmt("%.3f", min_rho)};
}

Verdict ablation() {
    ExperimentConfig config;
    config.gen_length = 64;
    config.oracle.deceive_rate = 0.15;
    struct Tally {
        double error = 0, steps = 0;
        std::set<std::size_t> distinct_steps;
    };
    std::map<std::string, Tally> tally;
    const std::vector<std::string> labels = {"saber", "saber-no-backtrack", "confidence"};
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        for (const auto &label : labels) {
            auto rec = run_experiment(config, resolve_strategy(label, config), seed);
            auto &t = tally[label];
            t.error += *rec.metrics.token_error_rate / 100.0;
            t.steps += static_cast<double>(rec.metrics.steps_used) / 100.0;
            t.distinct_steps.insert(rec.metrics.steps_used);
            g_runs.push_back(std::move(rec.result));
        }
    }
    const auto &full = tally["saber"];
    const auto &no_bt = tally["saber-no-backtrack"];
    const auto &base = tally["confidence"];
    const bool error_ok = full.error <= 0.8 * no_bt.error;
    const bool steps_ok = full.steps <= 0.75 * 64.0;
    const bool base_ok = base.distinct_steps == std::set<std::size_t>{64};
    return {error_ok && steps_ok && base_ok,
            fmt("error saber %.4f vs no-backtrack %.4f (ratio %.3f, need <= 0.8); saber mean steps %.2f (need <= 48)",
                full.error, no_bt.error, full.error / no_bt.error, full.steps) +
                "; confidence steps " + (base_ok ? "64 on every seed" : "NOT always 64")};
}

Verdict replay_fidelity() {
    std::size_t ok = 0;
    for (const auto &run : g_runs) {
        std::istringstream in(run.trace.to_jsonl());
        const Trace parsed = Trace::parse_jsonl(in);
        const bool state_ok = replay_equivalent(replay(parsed), run.final_state);
        const bool metrics_ok = metrics(parsed).to_json() == metrics(run.trace).to_json();
        const bool counts_ok = metrics(parsed).steps_used == run.steps_used &&
                               metrics(parsed).remask_count == run.remask_count &&
                               metrics(parsed).completed == run.completed;
        ok += state_ok && metrics_ok && counts_ok ? 1 : 0;
    }
    return {ok == g_runs.size() && !g_runs.empty(),
            std::to_string(ok) + "/" + std::to_string(g_runs.size()) + " runs replay to identical state and metrics"};
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism() {
    const fs::path root = fs::temp_directory_path() / "saber_acceptance_determinism";
    fs::remove_all(root);
    ExperimentConfig config;
    config.gen_length = 64;
    config.seeds = {1, 2};
    config.jobs = 2;
    std::vector<std::string> reference;
    std::size_t identical = 0;
    for (int repeat = 0; repeat < 20; ++repeat) {
        config.output_dir = root / std::to_string(repeat);
        std::ostringstream out, err;
        if (cli::cmd_generate(config, out, err) != cli::kOk) {
            return {false, "cmd_generate failed: " + err.str()};
        }
        std::vector<std::string> traces;
        for (auto seed : config.seeds) {
            traces.push_back(slurp(config.output_dir / (run_id_for("saber", seed) + ".trace.jsonl")));
        }
        if (repeat == 0) reference = traces;
        identical += traces == reference && !traces.front().empty() ? 1 : 0;
    }
    fs::remove_all(root);
    return {identical == 20, std::to_string(identical) + "/20 repeats byte-identical"};
}

} // namespace

int main() {
    criterion("formula-exactness", 1, formula_exactness);
    criterion("greedy-equivalence", 30, greedy_equivalence);
    criterion("termination", 30, termination);
    criterion("confidence-trend", 60, confidence_rises_with_context);
    criterion("backtracking-ablation", 120, ablation);
    criterion("replay-fidelity", 30, replay_fidelity);
    criterion("determinism", 60, determinism);
    std::printf("%s: %d criterion(s) failed\n", g_failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", g_failures);
    return g_failures ? 1 : 0;
}
