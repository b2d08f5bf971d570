// SPDX-License-Identifier: Apache-2.0
// posemoe command-line entry point.
//
// Exit codes: 0 success, 1 verification or training failure, 2 usage or
// config error (including a missing checkpoint).

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cli/commands.hpp"
#include "posemoe/tensor.hpp"

namespace {

using namespace posemoe;
using namespace posemoe::cli;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> precision;

    void add(CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "Seed for every random stream");
        cmd->add_option("--out", out, "Output directory");
        cmd->add_option("--precision", precision, "Floating-point precision")->check(CLI::IsMember({"f32", "f64"}));
    }

    template <typename Run>
    Run resolve(Run run) const {
        if (!config.empty()) apply_json(load_config_file(config), run);
        if (seed) run.common.seed = *seed;
        if (out) run.common.out_dir = *out;
        if (precision) run.common.precision = *precision;
        return run;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dense-to-MoE language models, rectified flows and Pose-DiT pick-and-place planning"};
    app.require_subcommand(1);

    CommonFlags gc_flags, lm_flags, conv_flags, ft_flags, flow_flags, pd_flags, bench_flags;
    std::string fault_op;
    std::optional<std::string> conv_ckpt, ft_ckpt, bench_model;
    std::optional<std::size_t> bench_steps, bench_compare, bench_episodes;

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every primitive and both models");
    gc_flags.add(gc);
    gc->add_option("--inject-backward-fault", fault_op)->group("");

    auto* lm = app.add_subcommand("train-lm", "Pre-train the dense language model");
    lm_flags.add(lm);

    auto* conv = app.add_subcommand("convert-moe", "Convert a dense checkpoint to MoE and verify equivalence");
    conv_flags.add(conv);
    conv->add_option("--checkpoint", conv_ckpt, "Dense checkpoint (default <out>/dense.nta)");

    auto* ft = app.add_subcommand("finetune-moe", "LoRA fine-tuning of a MoE (or dense baseline) checkpoint");
    ft_flags.add(ft);
    ft->add_option("--checkpoint", ft_ckpt, "MoE or dense checkpoint (default <out>/moe.nta)");

    auto* flow = app.add_subcommand("train-flow2d", "Train and evaluate a 2D rectified flow");
    flow_flags.add(flow);

    auto* pd = app.add_subcommand("train-posedit", "Train Pose-DiT on oracle demonstrations");
    pd_flags.add(pd);

    auto* bench = app.add_subcommand("eval-bench", "Evaluate a policy on the pick-and-place benchmark");
    bench_flags.add(bench);
    bench->add_option("--model", bench_model, "'oracle' or a Pose-DiT checkpoint (default <out>/posedit.nta)");
    bench->add_option("--steps", bench_steps, "Inference steps")->check(CLI::PositiveNumber);
    bench->add_option("--compare-steps", bench_compare, "Second step count for the speedup comparison")
        ->check(CLI::PositiveNumber);
    bench->add_option("--episodes", bench_episodes, "Episodes per task kind")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gc) {
            auto run = gc_flags.resolve(GradcheckRun{});
            if (!fault_op.empty()) posemoe::debug::inject_backward_fault(fault_op.c_str());
            auto res = run_gradcheck(run, std::cout);
            if (!res.passed) {
                std::cerr << "gradient check failed:";
                for (const auto& r : res.results)
                    if (!r.report.passed) std::cerr << ' ' << r.op;
                std::cerr << '\n';
                return kExitFailure;
            }
        } else if (*lm) {
            run_train_lm(lm_flags.resolve(TrainLMRun{}), std::cout);
        } else if (*conv) {
            auto run = conv_flags.resolve(ConvertRun{});
            if (conv_ckpt) run.checkpoint = *conv_ckpt;
            run_convert_moe(run, std::cout);
        } else if (*ft) {
            auto run = ft_flags.resolve(FinetuneRun{});
            if (ft_ckpt) run.checkpoint = *ft_ckpt;
            run_finetune(run, std::cout);
        } else if (*flow) {
            run_train_flow2d(flow_flags.resolve(Flow2DRun{}), std::cout);
        } else if (*pd) {
            run_train_posedit(pd_flags.resolve(TrainPoseDiTRun{}), std::cout);
        } else if (*bench) {
            auto run = bench_flags.resolve(EvalBenchRun{});
            if (bench_model) run.model = *bench_model;
            if (bench_steps) run.bench.infer_steps = *bench_steps;
            if (bench_compare) run.compare_steps = *bench_compare;
            if (bench_episodes) run.bench.episodes_per_kind = *bench_episodes;
            run_eval_bench(run, std::cout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const nlohmann::ordered_json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const VerificationError& e) {
        std::cerr << "verification failed: " << e.what() << '\n';
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return 0;
}
