// SPDX-License-Identifier: Apache-2.0

#include "posemoe/rectflow.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "posemoe/errors.hpp"
#include "posemoe/optim.hpp"
#include "posemoe/report.hpp"

namespace posemoe {

void FlowSchedule::validate() const {
    if (infer_steps == 0) throw ConfigError("flow: infer_steps must be >= 1");
    if (train_steps < infer_steps) throw ConfigError("flow: train_steps must be >= infer_steps");
}

std::vector<double> FlowSchedule::grid(std::size_t n) {
    if (n == 0) throw ConfigError("flow: grid needs at least one step");
    std::vector<double> g(n);
    for (std::size_t k = 0; k < n; ++k) g[k] = static_cast<double>(k) / static_cast<double>(n);
    return g;
}

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, std::span<const T> t) {
    if (x0.shape() != x1.shape() || x0.rank() != 2 || t.size() != x0.dim(0)) {
        detail::throw_shape("interpolate", x0.shape(), x1.shape(), "expected matching [N, d] and N times");
    }
    Tensor<T> tt({t.size()}, std::vector<T>(t.begin(), t.end()));
    std::vector<T> one_minus(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) one_minus[i] = T(1) - t[i];
    return add(row_scale(x1, tt), row_scale(x0, Tensor<T>({t.size()}, one_minus)));
}

template <typename T>
FlowBatch<T> make_pairs(const Tensor<T>& x0, const Tensor<T>& x1, Rng& rng, const FlowSchedule& schedule) {
    schedule.validate();
    const auto grid = FlowSchedule::grid(schedule.train_steps);
    FlowBatch<T> b;
    b.x0 = x0;
    b.x1 = x1;
    b.t.resize(x0.dim(0));
    for (auto& t : b.t) t = static_cast<T>(grid[rng.below(grid.size())]);
    b.xt = interpolate<T>(x0, x1, b.t);
    b.target = sub(x1, x0);
    return b;
}

template <typename T>
Tensor<T> rf_loss(const VelocityFn<T>& v, const FlowBatch<T>& batch) {
    Tensor<T> diff = sub(batch.target, v(batch.xt, batch.t));
    return scale(sum(mul(diff, diff)), T(1) / static_cast<T>(batch.xt.dim(0)));
}

template <typename T>
EulerResult<T> euler_sample(const VelocityFn<T>& v, const Tensor<T>& z0, std::size_t n_steps, bool record_trajectory) {
    NoGradGuard no_grad;
    const auto grid = FlowSchedule::grid(n_steps);
    const T dt = T(1) / static_cast<T>(n_steps);
    EulerResult<T> r;
    Tensor<T> z = z0.detach();
    if (record_trajectory) r.trajectory.push_back(z);
    std::vector<T> t(z0.dim(0));
    for (std::size_t k = 0; k < n_steps; ++k) {
        std::fill(t.begin(), t.end(), static_cast<T>(grid[k]));
        try {
            z = add(z, scale(v(z, t), dt));
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("euler_sample: non-finite state at step " + std::to_string(k) + ": " + e.what());
        }
        ++r.evaluations;
        if (record_trajectory) r.trajectory.push_back(z);
    }
    r.z1 = z;
    return r;
}

template <typename T>
double straightness(const VelocityFn<T>& v, const Tensor<T>& z0, std::size_t n_fine) {
    if (n_fine < 50) throw ConfigError("straightness: n_fine must be >= 50");
    NoGradGuard no_grad;
    auto traj = euler_sample(v, z0, n_fine, true);
    Tensor<T> disp = sub(traj.z1, z0);
    const auto grid = FlowSchedule::grid(n_fine);
    std::vector<T> t(z0.dim(0));
    double total = 0.0;
    for (std::size_t k = 0; k < n_fine; ++k) {
        std::fill(t.begin(), t.end(), static_cast<T>(grid[k]));
        Tensor<T> d = sub(v(traj.trajectory[k], t), disp);
        for (T x : d.data()) total += static_cast<double>(x) * static_cast<double>(x);
    }
    return total / static_cast<double>(n_fine * z0.dim(0));
}

namespace {

double mean_pair_distance(std::span<const double> a, std::span<const double> b, std::size_t dim) {
    const std::size_t n = a.size() / dim, m = b.size() / dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            double sq = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double d = a[i * dim + c] - b[j * dim + c];
                sq += d * d;
            }
            row += std::sqrt(sq);
        }
        total += row;
    }
    return total / static_cast<double>(n * m);
}

}  // namespace

double energy_distance(std::span<const double> x, std::span<const double> y, std::size_t dim) {
    if (dim == 0 || x.empty() || y.empty() || x.size() % dim || y.size() % dim) {
        throw ShapeError("energy_distance: sample arrays must be non-empty multiples of dim");
    }
    return 2.0 * mean_pair_distance(x, y, dim) - mean_pair_distance(x, x, dim) - mean_pair_distance(y, y, dim);
}

ToyDataset parse_toy_dataset(const std::string& name) {
    if (name == "eight-gaussians") return ToyDataset::EightGaussians;
    if (name == "two-moons") return ToyDataset::TwoMoons;
    if (name == "checkerboard") return ToyDataset::Checkerboard;
    throw ConfigError("flow: unknown dataset '" + name + "'");
}

std::string toy_dataset_name(ToyDataset d) {
    switch (d) {
        case ToyDataset::EightGaussians: return "eight-gaussians";
        case ToyDataset::TwoMoons: return "two-moons";
        case ToyDataset::Checkerboard: return "checkerboard";
    }
    return {};
}

std::vector<double> sample_toy(ToyDataset d, std::size_t n, Rng& rng) {
    std::vector<double> out(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        double x = 0, y = 0;
        switch (d) {
            case ToyDataset::EightGaussians: {
                const double angle = static_cast<double>(rng.below(8)) * std::numbers::pi / 4.0;
                x = (4.0 * std::cos(angle) + 0.5 * rng.normal()) / std::numbers::sqrt2;
                y = (4.0 * std::sin(angle) + 0.5 * rng.normal()) / std::numbers::sqrt2;
                break;
            }
            case ToyDataset::TwoMoons: {
                const double theta = std::numbers::pi * rng.uniform();
                if (rng.below(2)) {
                    x = std::cos(theta);
                    y = std::sin(theta);
                } else {
                    x = 1.0 - std::cos(theta);
                    y = 0.5 - std::sin(theta);
                }
                x = 2.0 * (x - 0.5) + 0.2 * rng.normal();
                y = 2.0 * (y - 0.25) + 0.2 * rng.normal();
                break;
            }
            case ToyDataset::Checkerboard: {
                const double a = rng.uniform(-2.0, 2.0);
                const double b = rng.uniform() - 2.0 * static_cast<double>(rng.below(2));
                x = 2.0 * a;
                y = 2.0 * (b + static_cast<double>(static_cast<long>(std::floor(a)) & 1));
                break;
            }
        }
        out[2 * i] = x;
        out[2 * i + 1] = y;
    }
    return out;
}

std::vector<double> sample_gaussian(std::size_t n, std::size_t dim, Rng& rng) {
    std::vector<double> out(n * dim);
    rng.fill_normal<double>(out);
    return out;
}

template <typename T>
VelocityMLP<T>::VelocityMLP(const VelocityMLPConfig& cfg, Rng& rng) : config(cfg) {
    if (!cfg.dim || !cfg.hidden || cfg.layers < 2 || cfg.time_features < 2 || cfg.time_features % 2) {
        throw ConfigError("velocity mlp: need dim, hidden > 0, layers >= 2 and an even time_features >= 2");
    }
    layers.emplace_back(cfg.dim + cfg.time_features, cfg.hidden, rng);
    for (std::size_t l = 2; l < cfg.layers; ++l) layers.emplace_back(cfg.hidden, cfg.hidden, rng);
    layers.emplace_back(cfg.hidden, cfg.dim, rng);
}

template <typename T>
Tensor<T> VelocityMLP<T>::operator()(const Tensor<T>& x, std::span<const T> t) const {
    std::vector<T> scaled(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) scaled[i] = t[i] * T(1000);
    Tensor<T> h = concat<T>({x, sinusoidal_features<T>(scaled, config.time_features)}, 1);
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) h = silu(layers[l](h));
    return layers.back()(h);
}

template <typename T>
VelocityFn<T> VelocityMLP<T>::fn() const {
    return [self = *this](const Tensor<T>& x, std::span<const T> t) { return self(x, t); };
}

template <typename T>
ParamList<T> VelocityMLP<T>::parameters() const {
    ParamList<T> p;
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(p, "mlp" + std::to_string(l));
    return p;
}

void Flow2DTrainConfig::validate() const {
    schedule.validate();
    if (!steps || !batch_size || !eval_samples || !log_every) {
        throw ConfigError("flow: steps, batch_size, eval_samples and log_every must be positive");
    }
    if (!(lr > 0.0)) throw ConfigError("flow: lr must be positive");
    for (auto n : eval_steps)
        if (n == 0) throw ConfigError("flow: eval step counts must be >= 1");
}

namespace {

template <typename T>
Tensor<T> to_tensor(const std::vector<double>& v, std::size_t dim) {
    std::vector<T> cast(v.begin(), v.end());
    return Tensor<T>({v.size() / dim, dim}, std::move(cast));
}

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
    return {t.data().begin(), t.data().end()};
}

}  // namespace

template <typename T>
Flow2DResult<T> train_flow_2d(ToyDataset dataset, const VelocityMLPConfig& mlp, const Flow2DTrainConfig& cfg) {
    cfg.validate();
    if (mlp.dim != 2) throw ConfigError("flow: the 2D testbed needs dim = 2");
    Flow2DResult<T> res;
    Rng init_rng(Rng::derive(cfg.seed, 1));
    res.model = VelocityMLP<T>(mlp, init_rng);
    const auto params = trainable(res.model.parameters());
    AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    AdamW<T> opt(params, oc);
    Rng data_rng(Rng::derive(cfg.seed, 2)), noise_rng(Rng::derive(cfg.seed, 3)), t_rng(Rng::derive(cfg.seed, 4));
    const auto v = res.model.fn();

    double window = 0.0;
    std::size_t window_n = 0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        auto x1 = to_tensor<T>(sample_toy(dataset, cfg.batch_size, data_rng), 2);
        auto x0 = to_tensor<T>(sample_gaussian(cfg.batch_size, 2, noise_rng), 2);
        auto batch = make_pairs(x0, x1, t_rng, cfg.schedule);
        opt.set_lr(warmup_cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup_steps, 0.05));
        opt.zero_grad();
        Tensor<T> loss;
        try {
            loss = rf_loss(v, batch);
        } catch (const NonFiniteError& e) {
            throw DivergenceError("flow: non-finite loss at step " + std::to_string(step) + ": " + e.what());
        }
        backward(loss);
        opt.step();
        window += static_cast<double>(loss.item());
        ++window_n;
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            res.loss_curve.emplace_back(step + 1, window / static_cast<double>(window_n));
            window = 0.0;
            window_n = 0;
        }
    }

    Rng eval_noise(Rng::derive(cfg.seed, 5)), ref_rng(Rng::derive(cfg.seed, 6)), floor_rng(Rng::derive(cfg.seed, 7));
    const auto reference = sample_toy(dataset, cfg.eval_samples, ref_rng);
    res.noise_floor = energy_distance(sample_toy(dataset, cfg.eval_samples, floor_rng), reference, 2);
    const auto z0 = to_tensor<T>(sample_gaussian(cfg.eval_samples, 2, eval_noise), 2);
    const std::size_t n_straight = std::min<std::size_t>(cfg.eval_samples, 500);
    const double s = straightness(v, slice(z0, 0, 0, n_straight), 100);
    for (auto n : cfg.eval_steps) {
        const auto start = std::chrono::steady_clock::now();
        auto sample = euler_sample(v, z0, n);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        res.eval.push_back({n, energy_distance(to_doubles(sample.z1), reference, 2), s, ms});
    }
    return res;
}

void write_flow_eval_csv(const std::filesystem::path& path, const std::vector<FlowEvalRow>& rows) {
    CsvWriter csv(path);
    csv.header({"step_count", "energy_distance", "straightness", "wall_ms"});
    for (const auto& r : rows) {
        csv.row({std::to_string(r.step_count), format_real(r.energy_distance), format_real(r.straightness),
                 format_real(r.wall_ms)});
    }
}

#define POSEMOE_INSTANTIATE(T)                                                                                     \
    template Tensor<T> interpolate(const Tensor<T>&, const Tensor<T>&, std::span<const T>);                        \
    template FlowBatch<T> make_pairs(const Tensor<T>&, const Tensor<T>&, Rng&, const FlowSchedule&);               \
    template Tensor<T> rf_loss(const VelocityFn<T>&, const FlowBatch<T>&);                                         \
    template EulerResult<T> euler_sample(const VelocityFn<T>&, const Tensor<T>&, std::size_t, bool);               \
    template double straightness(const VelocityFn<T>&, const Tensor<T>&, std::size_t);                             \
    template struct VelocityMLP<T>;                                                                                \
    template Flow2DResult<T> train_flow_2d(ToyDataset, const VelocityMLPConfig&, const Flow2DTrainConfig&);

POSEMOE_INSTANTIATE(float)
POSEMOE_INSTANTIATE(double)
#undef POSEMOE_INSTANTIATE

}  // namespace posemoe
