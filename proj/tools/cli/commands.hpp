// SPDX-License-Identifier: Apache-2.0
// Experiment commands behind the posemoe CLI. Each run config carries the
// common header (seed, precision, out_dir) plus command-specific sections;
// every run writes its resolved config as <command>.config.json in out_dir.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "config_io.hpp"
#include "posemoe/grad_suite.hpp"
#include "posemoe/lm_train.hpp"
#include "posemoe/moe.hpp"
#include "posemoe/rectflow.hpp"
#include "posemoe/taskbench.hpp"

namespace posemoe::cli {

/// Verification failed (gradient check, conversion equivalence); exit 1.
class VerificationError : public Error {
public:
    using Error::Error;
};

struct CommonConfig {
    std::uint64_t seed = 0;
    /// "f32" or "f64".
    std::string precision = "f32";
    std::string out_dir = "out";

    void validate() const;
};

struct CorpusConfig {
    /// "general" or "tabletop".
    std::string domain = "general";
    std::size_t train_chars = 200000;
    std::size_t val_chars = 20000;
};

struct GradcheckRun {
    CommonConfig common{0, "f64", "out"};
    GradCheckOptions check;
    bool models = true;
};

struct TrainLMRun {
    CommonConfig common;
    DenseTransformerConfig model = desk_model();
    CorpusConfig corpus;
    LMTrainConfig train = desk_train();

    static DenseTransformerConfig desk_model();
    static LMTrainConfig desk_train();
};

struct ConvertRun {
    CommonConfig common;
    /// Empty means <out_dir>/dense.nta.
    std::string checkpoint;
    MoEConfig moe = MoEConfig::e4_top2();
    std::size_t verify_batches = 100;
    std::size_t verify_batch_size = 4;
};

struct FinetuneRun {
    CommonConfig common;
    /// A MoE checkpoint, or a dense one for the dense+LoRA baseline. Empty
    /// means <out_dir>/moe.nta.
    std::string checkpoint;
    CorpusConfig corpus{"tabletop", 200000, 20000};
    LoRAConfig lora;
    LMTrainConfig train = desk_train();

    static LMTrainConfig desk_train();
};

struct Flow2DRun {
    CommonConfig common;
    /// eight-gaussians, two-moons or checkerboard.
    std::string dataset = "eight-gaussians";
    VelocityMLPConfig model;
    Flow2DTrainConfig train;
    /// Writes samples_<N>.csv for every evaluated step count plus data.csv.
    bool dump_samples = false;
};

struct PoseDataConfig {
    std::uint64_t seed_begin = kTrainSeedBegin;
    std::uint64_t seed_end = kTrainSeedEnd;
    double difficulty = 0.0;
};

struct TrainPoseDiTRun {
    CommonConfig common;
    PoseDiTConfig model = bench_posedit_config();
    PoseDataConfig data;
    PoseTrainConfig train;
};

struct EvalBenchRun {
    CommonConfig common;
    /// "oracle", a checkpoint path, or empty for <out_dir>/posedit.nta.
    std::string model;
    BenchConfig bench;
    /// Non-zero: evaluate again with this many steps and report the speedup.
    std::size_t compare_steps = 0;
    /// Writes trajectories.jsonl, one plan per episode.
    bool dump_trajectories = false;
};

// ---- results ----------------------------------------------------------------

struct GradcheckOutcome {
    std::vector<GradSuiteResult> results;
    bool passed = true;
};

struct ConvertOutcome {
    double max_abs_diff = 0.0;
    double threshold = 0.0;
};

struct FinetuneOutcome {
    bool moe = false;
    LMTrainResult result;
    /// Largest F_i over layers on the validation windows after training.
    double max_final_F = 0.0;
};

struct Flow2DOutcome {
    std::vector<FlowEvalRow> eval;
    double noise_floor = 0.0;
};

struct TrainPoseDiTOutcome {
    double first_loss = 0.0;
    double final_loss = 0.0;
    double seconds = 0.0;
};

struct EvalBenchOutcome {
    BenchReport report;
    BenchReport compare;
    /// Wall-clock ratio compare / primary, 0 when no comparison ran.
    double speedup = 0.0;
};

GradcheckOutcome run_gradcheck(const GradcheckRun& run, std::ostream& log);
void run_train_lm(const TrainLMRun& run, std::ostream& log);
ConvertOutcome run_convert_moe(const ConvertRun& run, std::ostream& log);
FinetuneOutcome run_finetune(const FinetuneRun& run, std::ostream& log);
Flow2DOutcome run_train_flow2d(const Flow2DRun& run, std::ostream& log);
TrainPoseDiTOutcome run_train_posedit(const TrainPoseDiTRun& run, std::ostream& log);
EvalBenchOutcome run_eval_bench(const EvalBenchRun& run, std::ostream& log);

/// Parses a config file; throws ConfigError for unreadable or invalid JSON.
json load_config_file(const std::filesystem::path& path);

// ---- field lists --------------------------------------------------------------

template <typename Ar>
void visit(Ar& ar, CommonConfig& c) {
    ar("seed", c.seed);
    ar("precision", c.precision);
    ar("out_dir", c.out_dir);
}

template <typename Ar>
void visit(Ar& ar, CorpusConfig& c) {
    ar("domain", c.domain);
    ar("train_chars", c.train_chars);
    ar("val_chars", c.val_chars);
}

template <typename Ar>
void visit(Ar& ar, GradCheckOptions& c) {
    ar("h", c.h);
    ar("tol", c.tol);
    ar("rel_floor", c.rel_floor);
    ar("max_entries_per_param", c.max_entries_per_param);
}

template <typename Ar>
void visit(Ar& ar, DenseTransformerConfig& c) {
    ar("vocab_size", c.vocab_size);
    ar("embed_dim", c.embed_dim);
    ar("n_layers", c.n_layers);
    ar("n_heads", c.n_heads);
    ar("ffn_hidden", c.ffn_hidden);
    ar("max_seq_len", c.max_seq_len);
}

template <typename Ar>
void visit(Ar& ar, LMTrainConfig& c) {
    ar("epochs", c.epochs);
    ar("steps_per_epoch", c.steps_per_epoch);
    ar("batch_size", c.batch_size);
    ar("seq_len", c.seq_len);
    ar("lr", c.lr);
    ar("warmup_steps", c.warmup_steps);
    ar("weight_decay", c.weight_decay);
    ar("grad_clip", c.grad_clip);
    ar("balance_coefficient", c.balance_coefficient);
    ar("val_windows", c.val_windows);
}

template <typename Ar>
void visit(Ar& ar, MoEConfig& c) {
    ar("num_experts", c.num_experts);
    ar("top_k", c.top_k);
    ar("renormalize_topk", c.renormalize_topk);
}

template <typename Ar>
void visit(Ar& ar, LoRAConfig& c) {
    ar("rank", c.rank);
    ar("alpha", c.alpha);
    ar("attention", c.attention);
    ar("ffn", c.ffn);
}

template <typename Ar>
void visit(Ar& ar, FlowSchedule& c) {
    ar("train_steps", c.train_steps);
    ar("infer_steps", c.infer_steps);
}

template <typename Ar>
void visit(Ar& ar, VelocityMLPConfig& c) {
    ar("hidden", c.hidden);
    ar("layers", c.layers);
    ar("time_features", c.time_features);
}

template <typename Ar>
void visit(Ar& ar, Flow2DTrainConfig& c) {
    ar("steps", c.steps);
    ar("batch_size", c.batch_size);
    ar("lr", c.lr);
    ar("warmup_steps", c.warmup_steps);
    ar("weight_decay", c.weight_decay);
    ar("eval_samples", c.eval_samples);
    ar("eval_steps", c.eval_steps);
    ar("log_every", c.log_every);
    ar("schedule", c.schedule);
}

template <typename Ar>
void visit(Ar& ar, PoseDiTConfig& c) {
    ar("n_blocks", c.n_blocks);
    ar("hidden", c.hidden);
    ar("n_heads", c.n_heads);
    ar("ffn_mult", c.ffn_mult);
    ar("horizon", c.horizon);
    ar("n_templates", c.n_templates);
    ar("template_dim", c.template_dim);
    ar("scene_features", c.scene_features);
    ar("temporal_attention", c.temporal_attention);
    ar("adaln_condition", c.adaln_condition);
    ar("schedule", c.schedule);
}

template <typename Ar>
void visit(Ar& ar, PoseTrainConfig& c) {
    ar("steps", c.steps);
    ar("batch_size", c.batch_size);
    ar("lr", c.lr);
    ar("warmup_steps", c.warmup_steps);
    ar("weight_decay", c.weight_decay);
    ar("grad_clip", c.grad_clip);
    ar("log_every", c.log_every);
}

template <typename Ar>
void visit(Ar& ar, PoseDataConfig& c) {
    ar("seed_begin", c.seed_begin);
    ar("seed_end", c.seed_end);
    ar("difficulty", c.difficulty);
}

template <typename Ar>
void visit(Ar& ar, Tolerances& c) {
    ar("pick", c.pick);
    ar("place_xy", c.place_xy);
    ar("place_z", c.place_z);
}

template <typename Ar>
void visit(Ar& ar, BenchConfig& c) {
    ar("episodes_per_kind", c.episodes_per_kind);
    ar("seed_begin", c.seed_begin);
    ar("infer_steps", c.infer_steps);
    ar("batch_size", c.batch_size);
    ar("difficulty", c.difficulty);
    ar("tolerances", c.tol);
}

// Run configs flatten the common header into the top level.

template <typename Ar>
void visit(Ar& ar, GradcheckRun& r) {
    visit(ar, r.common);
    ar("check", r.check);
    ar("models", r.models);
}

template <typename Ar>
void visit(Ar& ar, TrainLMRun& r) {
    visit(ar, r.common);
    ar("model", r.model);
    ar("corpus", r.corpus);
    ar("train", r.train);
}

template <typename Ar>
void visit(Ar& ar, ConvertRun& r) {
    visit(ar, r.common);
    ar("checkpoint", r.checkpoint);
    ar("moe", r.moe);
    ar("verify_batches", r.verify_batches);
    ar("verify_batch_size", r.verify_batch_size);
}

template <typename Ar>
void visit(Ar& ar, FinetuneRun& r) {
    visit(ar, r.common);
    ar("checkpoint", r.checkpoint);
    ar("corpus", r.corpus);
    ar("lora", r.lora);
    ar("train", r.train);
}

template <typename Ar>
void visit(Ar& ar, Flow2DRun& r) {
    visit(ar, r.common);
    ar("dataset", r.dataset);
    ar("model", r.model);
    ar("train", r.train);
    ar("dump_samples", r.dump_samples);
}

template <typename Ar>
void visit(Ar& ar, TrainPoseDiTRun& r) {
    visit(ar, r.common);
    ar("model", r.model);
    ar("data", r.data);
    ar("train", r.train);
}

template <typename Ar>
void visit(Ar& ar, EvalBenchRun& r) {
    visit(ar, r.common);
    ar("model", r.model);
    ar("bench", r.bench);
    ar("compare_steps", r.compare_steps);
    ar("dump_trajectories", r.dump_trajectories);
}

}  // namespace posemoe::cli
