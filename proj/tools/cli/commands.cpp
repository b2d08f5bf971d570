// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>

#include "posemoe/model_gradcheck.hpp"
#include "posemoe/nta.hpp"
#include "posemoe/report.hpp"
#include "posemoe/transformer.hpp"

namespace posemoe::cli {

namespace fs = std::filesystem;

void CommonConfig::validate() const {
    if (precision != "f32" && precision != "f64") {
        throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
    }
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

DenseTransformerConfig TrainLMRun::desk_model() {
    DenseTransformerConfig c;
    c.vocab_size = kCorpusVocab;
    c.embed_dim = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.ffn_hidden = 256;
    c.max_seq_len = 32;
    return c;
}

LMTrainConfig TrainLMRun::desk_train() {
    LMTrainConfig c;
    c.epochs = 1;
    c.steps_per_epoch = 400;
    c.lr = 3e-3;
    c.warmup_steps = 20;
    c.seq_len = 32;
    return c;
}

LMTrainConfig FinetuneRun::desk_train() {
    LMTrainConfig c;
    c.epochs = 4;
    c.steps_per_epoch = 100;
    c.lr = 3e-3;
    c.warmup_steps = 10;
    c.seq_len = 32;
    return c;
}

json load_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename F>
decltype(auto) with_precision(const std::string& precision, F&& f) {
    if (precision == "f64") return f(double{});
    return f(float{});
}

template <typename T>
constexpr const char* precision_name() {
    return std::is_same_v<T, double> ? "f64" : "f32";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

template <typename Run>
fs::path prepare(const Run& run, const char* command) {
    run.common.validate();
    fs::path out(run.common.out_dir);
    fs::create_directories(out);
    write_text(out / (std::string(command) + ".config.json"), JsonWriter::dump(run).dump(2) + "\n");
    return out;
}

fs::path sidecar_path(const fs::path& checkpoint) {
    fs::path p = checkpoint;
    return p.replace_extension(".json");
}

template <typename T>
void write_checkpoint(const fs::path& path, const ParamList<T>& params, json config, std::uint64_t seed) {
    write_nta(path, to_nta_entries(params));
    json side = json::object();
    side["config"] = std::move(config);
    side["activation"] = "silu";
    side["precision"] = precision_name<T>();
    side["seed"] = seed;
    write_text(sidecar_path(path), side.dump(2) + "\n");
}

json read_sidecar(const fs::path& checkpoint) {
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
    const fs::path side = sidecar_path(checkpoint);
    if (!fs::exists(side)) throw ConfigError("checkpoint sidecar not found: " + side.string());
    std::ifstream in(side);
    try {
        json doc = json::parse(in);
        if (!doc.contains("config") || !doc["config"].is_object()) throw ConfigError("sidecar has no config object");
        if (doc.value("activation", "") != "silu") throw CheckpointError("unsupported activation in " + side.string());
        return doc;
    } catch (const json::exception& e) {
        throw CheckpointError("sidecar " + side.string() + ": " + e.what());
    }
}

CorpusDomain parse_domain(const std::string& name) {
    if (name == "general") return CorpusDomain::General;
    if (name == "tabletop") return CorpusDomain::Tabletop;
    throw ConfigError("corpus.domain must be general or tabletop, got '" + name + "'");
}

TokenCorpus build_corpus(const CorpusConfig& c, std::uint64_t seed) {
    return make_corpus(parse_domain(c.domain), seed, c.train_chars, c.val_chars);
}

// LM checkpoint config: {"kind": "dense"|"moe", "model", "moe"?, "lora"?}.
json lm_config_json(const DenseTransformerConfig& model, const MoEConfig* moe, const LoRAConfig* lora) {
    json c = json::object();
    c["kind"] = moe ? "moe" : "dense";
    c["model"] = JsonWriter::dump(model);
    if (moe) c["moe"] = JsonWriter::dump(*moe);
    if (lora) c["lora"] = JsonWriter::dump(*lora);
    return c;
}

template <typename T>
TransformerLM<T> load_lm(const fs::path& checkpoint, json* config_out = nullptr) {
    const json side = read_sidecar(checkpoint);
    const json& cfg = side["config"];
    DenseTransformerConfig mc;
    try {
        apply_json(cfg.at("model"), mc, "model");
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint config: " + std::string(e.what()));
    }
    Rng rng(0);
    TransformerLM<T> model(mc, rng);
    if (cfg.contains("moe")) {
        MoEConfig moe;
        apply_json(cfg["moe"], moe, "moe");
        model = convert_dense_to_moe(model, moe);
    }
    if (cfg.contains("lora")) {
        LoRAConfig lora;
        apply_json(cfg["lora"], lora, "lora");
        attach_lora(model, lora, rng);
    }
    assign_from_nta(read_nta(checkpoint), model.parameters());
    if (config_out) *config_out = cfg;
    return model;
}

void log_lm_rows(std::ostream& log, const std::vector<LMEpochRow>& rows) {
    for (const auto& r : rows) {
        log << "epoch " << r.epoch << "  train_ce " << r.train_ce << "  val_ce " << r.val_ce;
        if (!r.F.empty()) {
            log << "  balance " << r.balance_loss << "  F";
            for (double f : r.F) log << ' ' << f;
        }
        log << '\n';
    }
}

void write_loss_csv(const fs::path& path, const std::vector<std::pair<std::size_t, double>>& curve) {
    CsvWriter csv(path);
    csv.header({"step", "loss"});
    for (const auto& [step, loss] : curve) csv.row({std::to_string(step), format_real(loss)});
}

void write_points_csv(const fs::path& path, std::span<const double> xy) {
    CsvWriter csv(path);
    csv.header({"x", "y"});
    for (std::size_t i = 0; i + 1 < xy.size(); i += 2) csv.row({format_real(xy[i]), format_real(xy[i + 1])});
}

template <typename T>
PoseDiT<T> load_posedit(const fs::path& checkpoint) {
    const json side = read_sidecar(checkpoint);
    PoseDiTConfig cfg;
    apply_json(side["config"], cfg, "config");
    Rng rng(0);
    PoseDiT<T> model(cfg, rng);
    assign_from_nta(read_nta(checkpoint), model.parameters());
    return model;
}

void log_bench(std::ostream& log, const BenchReport& rep) {
    log << "name,success_rate,n_episodes,infer_steps,wall_ms_per_episode,evals_per_episode\n";
    for (const auto& r : rep.rows) {
        log << r.name << ',' << r.success_rate << ',' << r.n_episodes << ',' << r.infer_steps << ','
            << r.wall_ms_per_episode << ',' << r.evals_per_episode << '\n';
    }
}

}  // namespace

GradcheckOutcome run_gradcheck(const GradcheckRun& run, std::ostream& log) {
    if (run.common.precision != "f64") throw ConfigError("gradcheck always runs in 64-bit; precision must be f64");
    const fs::path out = prepare(run, "gradcheck");
    GradCheckOptions opts = run.check;
    opts.seed = run.common.seed;

    GradcheckOutcome res;
    res.results = run_primitive_grad_suite(run.common.seed, opts);
    if (run.models) {
        res.results.push_back(run_moe_lm_grad_check(run.common.seed, opts));
        res.results.push_back(run_posedit_grad_check(run.common.seed, opts));
    }

    CsvWriter csv(out / "gradcheck.csv");
    csv.header({"op", "worst_rel_error", "max_abs_error", "entries_checked", "tol", "passed"});
    for (const auto& r : res.results) {
        double abs_err = 0.0;
        std::size_t checked = 0;
        for (const auto& e : r.report.entries) {
            abs_err = std::max(abs_err, e.max_abs_error);
            checked += e.checked;
        }
        csv.row({r.op, format_real(r.report.worst_rel_error), format_real(abs_err), std::to_string(checked),
                 format_real(r.report.tol), r.report.passed ? "1" : "0"});
        log << (r.report.passed ? "ok    " : "FAIL  ") << r.op << "  worst rel error " << r.report.worst_rel_error
            << '\n';
        res.passed = res.passed && r.report.passed;
    }
    return res;
}

void run_train_lm(const TrainLMRun& run, std::ostream& log) {
    if (run.model.vocab_size != kCorpusVocab) {
        throw ConfigError("model.vocab_size must be " + std::to_string(kCorpusVocab) + " for the character corpus");
    }
    run.model.validate();
    run.train.validate();
    const fs::path out = prepare(run, "train-lm");
    const std::uint64_t seed = run.common.seed;
    const auto corpus = build_corpus(run.corpus, Rng::derive(seed, 2));
    with_precision(run.common.precision, [&](auto tag) {
        using T = decltype(tag);
        Rng init(Rng::derive(seed, 1));
        TransformerLM<T> model(run.model, init);
        LMTrainConfig tc = run.train;
        tc.seed = seed;
        const auto t0 = Clock::now();
        auto res = train_lm(model, corpus, tc);
        log_lm_rows(log, res.rows);
        log << "val perplexity " << res.final_val_ppl << "  (" << seconds_since(t0) << " s)\n";
        write_lm_csv(out / "train_lm.csv", res.rows, 0);
        write_checkpoint(out / "dense.nta", model.parameters(), lm_config_json(run.model, nullptr, nullptr), seed);
    });
}

ConvertOutcome run_convert_moe(const ConvertRun& run, std::ostream& log) {
    run.moe.validate();
    if (!run.verify_batches || !run.verify_batch_size) throw ConfigError("verify_batches and verify_batch_size must be positive");
    const fs::path out = prepare(run, "convert-moe");
    const fs::path ckpt = run.checkpoint.empty() ? out / "dense.nta" : fs::path(run.checkpoint);
    return with_precision(run.common.precision, [&](auto tag) {
        using T = decltype(tag);
        json cfg;
        auto dense = load_lm<T>(ckpt, &cfg);
        if (cfg.value("kind", "") != "dense" || cfg.contains("lora")) {
            throw ConfigError("convert-moe needs a dense checkpoint without adapters: " + ckpt.string());
        }
        auto moe = convert_dense_to_moe(dense, run.moe);

        ConvertOutcome res;
        res.threshold = std::is_same_v<T, double> ? 1e-12 : 1e-6;
        NoGradGuard no_grad;
        Rng rng(Rng::derive(run.common.seed, 5));
        const auto& mc = dense.config();
        std::vector<std::int32_t> ids(run.verify_batch_size * mc.max_seq_len);
        for (std::size_t b = 0; b < run.verify_batches; ++b) {
            for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(mc.vocab_size));
            const auto da = dense.forward(ids, run.verify_batch_size, mc.max_seq_len).logits;
            const auto ma = moe.forward(ids, run.verify_batch_size, mc.max_seq_len).logits;
            auto a = da.data(), m = ma.data();
            for (std::size_t i = 0; i < a.size(); ++i) {
                res.max_abs_diff = std::max(res.max_abs_diff, std::abs(static_cast<double>(a[i]) - m[i]));
            }
        }
        log << "max |dlogit| " << res.max_abs_diff << " over " << run.verify_batches << " batches (limit "
            << res.threshold << ")\n";
        if (!(res.max_abs_diff <= res.threshold)) {
            throw VerificationError("conversion changed the logits; MoE checkpoint not written");
        }
        write_checkpoint(out / "moe.nta", moe.parameters(), lm_config_json(mc, &run.moe, nullptr),
                         run.common.seed);
        return res;
    });
}

FinetuneOutcome run_finetune(const FinetuneRun& run, std::ostream& log) {
    run.lora.validate();
    run.train.validate();
    const fs::path out = prepare(run, "finetune-moe");
    const fs::path ckpt = run.checkpoint.empty() ? out / "moe.nta" : fs::path(run.checkpoint);
    const std::uint64_t seed = run.common.seed;
    const auto corpus = build_corpus(run.corpus, Rng::derive(seed, 3));
    return with_precision(run.common.precision, [&](auto tag) {
        using T = decltype(tag);
        json cfg;
        auto model = load_lm<T>(ckpt, &cfg);
        if (cfg.contains("lora")) throw ConfigError("checkpoint already carries adapters: " + ckpt.string());
        Rng lora_rng(Rng::derive(seed, 4));
        attach_lora(model, run.lora, lora_rng);

        FinetuneOutcome res;
        res.moe = model.is_moe();
        LMTrainConfig tc = run.train;
        tc.seed = seed;
        const auto t0 = Clock::now();
        res.result = train_lm(model, corpus, tc);
        for (const auto& layer : res.result.final_val_F)
            for (double f : layer) res.max_final_F = std::max(res.max_final_F, f);
        log_lm_rows(log, res.result.rows);
        log << (res.moe ? "moe" : "dense") << "+lora val perplexity " << res.result.final_val_ppl;
        if (res.moe) log << "  max F " << res.max_final_F;
        log << "  (" << seconds_since(t0) << " s)\n";

        const std::string name = res.moe ? "moe" : "dense";
        std::size_t experts = 0;
        std::optional<MoEConfig> moe_cfg;
        if (res.moe) {
            moe_cfg = model.blocks().front().moe->config;
            experts = moe_cfg->num_experts;
        }
        write_lm_csv(out / ("finetune_" + name + ".csv"), res.result.rows, experts);
        write_checkpoint(out / (name + "_lora.nta"), model.parameters(),
                         lm_config_json(model.config(), moe_cfg ? &*moe_cfg : nullptr, &run.lora), seed);
        return res;
    });
}

Flow2DOutcome run_train_flow2d(const Flow2DRun& run, std::ostream& log) {
    const ToyDataset dataset = parse_toy_dataset(run.dataset);
    run.train.validate();
    const fs::path out = prepare(run, "train-flow2d");
    const std::uint64_t seed = run.common.seed;
    return with_precision(run.common.precision, [&](auto tag) {
        using T = decltype(tag);
        Flow2DTrainConfig tc = run.train;
        tc.seed = seed;
        const auto t0 = Clock::now();
        auto res = train_flow_2d<T>(dataset, run.model, tc);
        log << "trained " << tc.steps << " steps in " << seconds_since(t0) << " s, final loss "
            << res.loss_curve.back().second << '\n';
        log << "noise floor " << res.noise_floor << '\n';
        for (const auto& r : res.eval) {
            log << "steps " << r.step_count << "  energy distance " << r.energy_distance << "  straightness "
                << r.straightness << "  wall " << r.wall_ms << " ms\n";
        }
        write_flow_eval_csv(out / "flow_eval.csv", res.eval);
        write_loss_csv(out / "flow_loss.csv", res.loss_curve);
        json cfg = json::object();
        cfg["dataset"] = run.dataset;
        cfg["model"] = JsonWriter::dump(run.model);
        write_checkpoint(out / "flow2d.nta", res.model.parameters(), cfg, seed);

        if (run.dump_samples) {
            Rng data_rng(Rng::derive(seed, 21));
            write_points_csv(out / "data.csv", sample_toy(dataset, tc.eval_samples, data_rng));
            Rng noise_rng(Rng::derive(seed, 22));
            const auto z = sample_gaussian(tc.eval_samples, 2, noise_rng);
            Tensor<T> z0(Shape{tc.eval_samples, 2}, std::vector<T>(z.begin(), z.end()));
            for (std::size_t n : tc.eval_steps) {
                auto s = euler_sample(res.model.fn(), z0, n).z1.data();
                std::vector<double> xy(s.begin(), s.end());
                write_points_csv(out / ("samples_" + std::to_string(n) + ".csv"), xy);
            }
        }
        return Flow2DOutcome{res.eval, res.noise_floor};
    });
}

TrainPoseDiTOutcome run_train_posedit(const TrainPoseDiTRun& run, std::ostream& log) {
    run.model.validate();
    run.train.validate();
    if (run.model.horizon != kBenchHorizon || run.model.n_templates != kBenchTemplates ||
        run.model.scene_features != kSceneFeatures) {
        throw ConfigError("model.horizon, n_templates and scene_features must match the benchmark (" +
                          std::to_string(kBenchHorizon) + ", " + std::to_string(kBenchTemplates) + ", " +
                          std::to_string(kSceneFeatures) + ")");
    }
    if (run.data.seed_end <= run.data.seed_begin) throw ConfigError("data.seed_end must exceed data.seed_begin");
    const fs::path out = prepare(run, "train-posedit");
    const std::uint64_t seed = run.common.seed;
    const auto demos = make_bench_demos(run.data.seed_begin, run.data.seed_end, run.data.difficulty);
    return with_precision(run.common.precision, [&](auto tag) {
        using T = decltype(tag);
        PoseTrainConfig tc = run.train;
        tc.seed = seed;
        const auto t0 = Clock::now();
        auto res = train_posedit<T>(demos, run.model, tc);
        TrainPoseDiTOutcome o{res.first_loss, res.final_loss, seconds_since(t0)};
        for (const auto& [step, loss] : res.loss_curve) log << "step " << step << "  loss " << loss << '\n';
        log << demos.size() << " demos, first loss " << o.first_loss << ", final loss " << o.final_loss << " ("
            << o.seconds << " s)\n";
        write_loss_csv(out / "posedit_loss.csv", res.loss_curve);
        write_checkpoint(out / "posedit.nta", res.model.parameters(), JsonWriter::dump(run.model), seed);
        return o;
    });
}

EvalBenchOutcome run_eval_bench(const EvalBenchRun& run, std::ostream& log) {
    const fs::path out = prepare(run, "eval-bench");
    std::function<BatchPolicy(std::size_t)> make_policy;
    if (run.model == "oracle") {
        make_policy = [](std::size_t) { return oracle_batch_policy(); };
    } else {
        const fs::path ckpt = run.model.empty() ? out / "posedit.nta" : fs::path(run.model);
        make_policy = with_precision(run.common.precision, [&](auto tag) {
            using T = decltype(tag);
            return std::function<BatchPolicy(std::size_t)>(
                [model = load_posedit<T>(ckpt)](std::size_t steps) { return posedit_batch_policy(model, steps); });
        });
    }

    EvalBenchOutcome res;
    res.report = run_benchmark(make_policy(run.bench.infer_steps), run.bench);
    log_bench(log, res.report);
    write_bench_csv(out / "bench.csv", res.report.rows);
    write_episode_csv(out / "bench_episodes.csv", res.report.episodes);
    if (run.dump_trajectories) {
        std::ostringstream lines;
        for (const auto& e : res.report.episodes) {
            TrajectoryMeta meta{task_kind_name(e.kind) + "-" + std::to_string(e.episode_seed), e.noise_seed,
                                run.bench.infer_steps, e.plan.clamped};
            lines << trajectory_to_json(e.plan.trajectory, meta) << '\n';
        }
        write_text(out / "trajectories.jsonl", lines.str());
    }
    if (run.compare_steps) {
        BenchConfig cmp = run.bench;
        cmp.infer_steps = run.compare_steps;
        res.compare = run_benchmark(make_policy(cmp.infer_steps), cmp);
        log_bench(log, res.compare);
        write_bench_csv(out / ("bench_steps" + std::to_string(cmp.infer_steps) + ".csv"), res.compare.rows);
        const double base = res.report.rows.back().wall_ms_per_episode;
        res.speedup = base > 0.0 ? res.compare.rows.back().wall_ms_per_episode / base : 0.0;
        log << "wall-clock speedup of " << run.bench.infer_steps << " over " << cmp.infer_steps << " steps: "
            << res.speedup << "x\n";
    }
    return res;
}

}  // namespace posemoe::cli
