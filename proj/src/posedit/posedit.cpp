// SPDX-License-Identifier: Apache-2.0

#include "posemoe/posedit.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "posemoe/errors.hpp"
#include "posemoe/optim.hpp"

namespace posemoe {

void PoseDiTConfig::validate() const {
    if (!n_blocks || !hidden || !n_heads || !ffn_mult || !horizon || !n_templates || !scene_features) {
        throw ConfigError("posedit: every extent must be positive");
    }
    if (hidden % n_heads) {
        throw ConfigError("posedit: hidden " + std::to_string(hidden) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (hidden % 2) throw ConfigError("posedit: hidden must be even for the timestep features");
    schedule.validate();
}

void PoseTrainConfig::validate() const {
    if (!steps || !batch_size || !log_every) throw ConfigError("posedit train: steps, batch_size, log_every must be positive");
    if (!(lr > 0.0)) throw ConfigError("posedit train: lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("posedit train: weight_decay must be >= 0");
}

template <typename T>
void AttentionWeights<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    wq.collect(out, prefix + ".wq");
    wk.collect(out, prefix + ".wk");
    wv.collect(out, prefix + ".wv");
    wo.collect(out, prefix + ".wo");
}

template <typename T>
void STDiTBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    ada.collect(out, prefix + ".ada");
    spatial.collect(out, prefix + ".spatial");
    cross1.collect(out, prefix + ".cross1");
    temporal.collect(out, prefix + ".temporal");
    cross2.collect(out, prefix + ".cross2");
    ffn.collect(out, prefix + ".ffn");
}

template <typename T>
Tensor<T> timestep_features(std::span<const T> t, std::size_t dim) {
    std::vector<T> scaled(t.begin(), t.end());
    for (auto& v : scaled) v *= T(1000);
    return sinusoidal_features<T>(scaled, dim);
}

namespace {

template <typename T>
AttentionWeights<T> make_attention(std::size_t h, Rng& rng) {
    return {Linear<T>(h, h, rng), Linear<T>(h, h, rng), Linear<T>(h, h, rng), Linear<T>(h, h, rng)};
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scl) {
    return add(mul(layer_norm(x), add_scalar(scl, T(1))), shift);
}

// [B·T·2, H] ordered (b, t, role) ↔ [B·2, T, H] ordered (b, role, t).
template <typename T>
Tensor<T> to_temporal(const Tensor<T>& x, std::size_t b, std::size_t t, std::size_t h) {
    return reshape(permute(reshape(x, {b, t, kRoles, h}), {0, 2, 1, 3}), {b * kRoles, t, h});
}

template <typename T>
Tensor<T> from_temporal(const Tensor<T>& x, std::size_t b, std::size_t t, std::size_t h) {
    return reshape(permute(reshape(x, {b, kRoles, t, h}), {0, 2, 1, 3}), {b * t * kRoles, h});
}

}  // namespace

template <typename T>
PoseDiT<T>::PoseDiT(const PoseDiTConfig& config, Rng& rng) : config_(config) {
    config.validate();
    const std::size_t h = config.hidden;
    embed_ = Linear<T>(kPoseDims, h, rng);
    role_emb_ = random_normal<T>({kRoles, h}, rng, 0.02);
    time_pos_ = random_normal<T>({config.horizon, h}, rng, 0.02);
    time1_ = Linear<T>(h, h, rng);
    time2_ = Linear<T>(h, h, rng);
    if (config.template_dim) template_table_ = random_normal<T>({config.n_templates, config.template_dim}, rng, 1.0);
    cond_proj_ = Linear<T>(config.cond_dim(), h, rng);
    for (std::size_t i = 0; i < config.n_blocks; ++i) {
        STDiTBlock<T> b;
        b.ada = Linear<T>::zeros(h, 15 * h);
        b.spatial = make_attention<T>(h, rng);
        b.cross1 = make_attention<T>(h, rng);
        b.temporal = make_attention<T>(h, rng);
        b.cross2 = make_attention<T>(h, rng);
        b.ffn = FeedForward<T>(h, config.ffn_mult * h, rng);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = LayerNorm<T>(h);
    head_ = Linear<T>::zeros(h, kPoseDims);
}

template <typename T>
Tensor<T> PoseDiT<T>::time_embedding(std::span<const T> t) const {
    return time2_(silu(time1_(timestep_features<T>(t, config_.hidden))));
}

template <typename T>
Tensor<T> PoseDiT<T>::modulation_input(std::span<const T> t, const Tensor<T>& cond_token) const {
    Tensor<T> c = time_embedding(t);
    if (config_.adaln_condition) c = add(c, cond_token);
    return silu(c);
}

template <typename T>
Tensor<T> PoseDiT<T>::condition_token(const std::vector<Condition>& conds) const {
    const std::size_t b = conds.size(), nf = config_.scene_features;
    std::vector<T> feats(b * nf);
    std::vector<std::int32_t> ids(b);
    for (std::size_t i = 0; i < b; ++i) {
        const auto& c = conds[i];
        if (c.template_id >= config_.n_templates) {
            throw Error("posedit: template id " + std::to_string(c.template_id) + " outside table of " +
                        std::to_string(config_.n_templates));
        }
        if (c.features.size() != nf) {
            throw ShapeError("posedit: condition has " + std::to_string(c.features.size()) + " scene features, expected " +
                             std::to_string(nf));
        }
        for (std::size_t j = 0; j < nf; ++j) {
            if (!std::isfinite(c.features[j])) throw NonFiniteError("posedit: non-finite condition feature");
            feats[i * nf + j] = static_cast<T>(c.features[j]);
        }
        ids[i] = static_cast<std::int32_t>(c.template_id);
    }
    Tensor<T> scene({b, nf}, std::move(feats));
    if (!template_table_.defined()) return cond_proj_(scene);
    return cond_proj_(concat<T>({embedding(template_table_, ids), scene}, 1));
}

template <typename T>
Tensor<T> PoseDiT<T>::block_forward(std::size_t index, const Tensor<T>& tokens, const Tensor<T>& mod_input,
                                    const Tensor<T>& cond_token, std::span<const std::uint8_t> valid) const {
    const auto& blk = blocks_.at(index);
    const std::size_t h = config_.hidden, heads = config_.n_heads, horizon = config_.horizon;
    const std::size_t s = config_.token_count(), b = mod_input.dim(0), n = tokens.dim(0);
    if (tokens.rank() != 2 || tokens.dim(1) != h || n != b * s) {
        throw ShapeError("posedit block: expected [" + std::to_string(b * s) + ", " + std::to_string(h) + "] tokens");
    }
    if (!valid.empty() && valid.size() != b * horizon) throw ShapeError("posedit block: validity mask size");

    auto chunks = split(blk.ada(mod_input), 1, std::vector<std::size_t>(15, h));
    for (auto& c : chunks) c = repeat_rows(c, s);

    auto cross = [&](const AttentionWeights<T>& w, const Tensor<T>& y) {
        Tensor<T> q = reshape(w.wq(y), {b, s, h});
        Tensor<T> k = reshape(w.wk(cond_token), {b, 1, h});
        Tensor<T> v = reshape(w.wv(cond_token), {b, 1, h});
        return w.wo(reshape(attention(q, k, v, heads, false), {n, h}));
    };

    Tensor<T> x = tokens;
    {
        Tensor<T> y = modulate(x, chunks[0], chunks[1]);
        const auto& w = blk.spatial;
        Shape g{b * horizon, kRoles, h};
        Tensor<T> a = attention(reshape(w.wq(y), g), reshape(w.wk(y), g), reshape(w.wv(y), g), heads, false);
        x = add(x, mul(chunks[2], w.wo(reshape(a, {n, h}))));
    }
    x = add(x, mul(chunks[5], cross(blk.cross1, modulate(x, chunks[3], chunks[4]))));
    if (config_.temporal_attention) {
        Tensor<T> y = modulate(x, chunks[6], chunks[7]);
        const auto& w = blk.temporal;
        std::vector<std::uint8_t> key_valid;
        if (!valid.empty()) {
            key_valid.resize(b * kRoles * horizon);
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t r = 0; r < kRoles; ++r)
                    for (std::size_t t = 0; t < horizon; ++t)
                        key_valid[(bi * kRoles + r) * horizon + t] = valid[bi * horizon + t];
        }
        Tensor<T> a = attention(to_temporal(w.wq(y), b, horizon, h), to_temporal(w.wk(y), b, horizon, h),
                                to_temporal(w.wv(y), b, horizon, h), heads, false, key_valid);
        x = add(x, mul(chunks[8], w.wo(from_temporal(a, b, horizon, h))));
    }
    x = add(x, mul(chunks[11], cross(blk.cross2, modulate(x, chunks[9], chunks[10]))));
    x = add(x, mul(chunks[14], blk.ffn(modulate(x, chunks[12], chunks[13]))));
    return x;
}

template <typename T>
Tensor<T> PoseDiT<T>::forward(const Tensor<T>& x, std::span<const T> t, const std::vector<Condition>& conds,
                              std::span<const std::uint8_t> valid) const {
    const std::size_t fd = config_.flat_dim(), s = config_.token_count();
    if (x.rank() != 2 || x.dim(1) != fd) {
        throw ShapeError("posedit: expected input [B, " + std::to_string(fd) + "], got rank " + std::to_string(x.rank()));
    }
    const std::size_t b = x.dim(0);
    if (t.size() != b || conds.size() != b) {
        throw ShapeError("posedit: batch of " + std::to_string(b) + " with " + std::to_string(t.size()) + " times and " +
                         std::to_string(conds.size()) + " conditions");
    }
    if (!valid.empty()) {
        if (valid.size() != b * config_.horizon) throw ShapeError("posedit: validity mask size");
        for (std::size_t i = 0; i < b; ++i) {
            if (!std::any_of(valid.begin() + i * config_.horizon, valid.begin() + (i + 1) * config_.horizon,
                             [](std::uint8_t v) { return v != 0; })) {
                throw ShapeError("posedit: row " + std::to_string(i) + " has no valid step");
            }
        }
    }
    ++*evaluations_;
    const std::size_t n = b * s;
    std::vector<std::int32_t> roles(n), steps(n);
    for (std::size_t i = 0; i < n; ++i) {
        roles[i] = static_cast<std::int32_t>(i % kRoles);
        steps[i] = static_cast<std::int32_t>((i / kRoles) % config_.horizon);
    }
    Tensor<T> h = embed_(reshape(x, {n, kPoseDims}));
    h = add(add(h, embedding(role_emb_, roles)), embedding(time_pos_, steps));
    Tensor<T> ctok = condition_token(conds);
    Tensor<T> mod = modulation_input(t, ctok);
    for (std::size_t i = 0; i < blocks_.size(); ++i) h = block_forward(i, h, mod, ctok, valid);
    Tensor<T> out = reshape(head_(final_norm_(h)), {b, fd});
    for (T v : out.data()) {
        if (!std::isfinite(v)) throw NonFiniteError("posedit: non-finite velocity");
    }
    return out;
}

template <typename T>
VelocityFn<T> PoseDiT<T>::fn(std::vector<Condition> conds, std::vector<std::uint8_t> valid) const {
    return [self = *this, conds = std::move(conds), valid = std::move(valid)](const Tensor<T>& x,
                                                                               std::span<const T> t) {
        return self.forward(x, t, conds, valid);
    };
}

template <typename T>
ParamList<T> PoseDiT<T>::parameters() const {
    ParamList<T> p;
    embed_.collect(p, "embed");
    p.push_back({"role_emb", role_emb_});
    p.push_back({"time_pos", time_pos_});
    time1_.collect(p, "time.mlp1");
    time2_.collect(p, "time.mlp2");
    if (template_table_.defined()) p.push_back({"template_table", template_table_});
    cond_proj_.collect(p, "cond_proj");
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(p, "block" + std::to_string(i));
    final_norm_.collect(p, "final_norm");
    head_.collect(p, "head");
    return p;
}

PoseDemo make_demo(Condition cond, const PoseTrajectory& traj, const Workspace& ws, std::size_t horizon) {
    if (traj.horizon() == 0 || traj.horizon() > horizon) {
        throw ShapeError("make_demo: plan of " + std::to_string(traj.horizon()) + " steps does not fit horizon " +
                         std::to_string(horizon));
    }
    PoseDemo d;
    d.cond = std::move(cond);
    d.target = normalize(traj, ws);
    d.target.resize(horizon * kRoles * kPoseDims, 0.0);
    d.valid.assign(horizon, 0);
    std::fill(d.valid.begin(), d.valid.begin() + static_cast<std::ptrdiff_t>(traj.horizon()), 1);
    return d;
}

template <typename T>
Tensor<T> posedit_loss(const PoseDiT<T>& model, const std::vector<const PoseDemo*>& batch, Rng& noise_rng,
                       Rng& t_rng) {
    const auto& cfg = model.config();
    const std::size_t b = batch.size(), fd = cfg.flat_dim(), step_dims = kRoles * kPoseDims;
    std::vector<T> x1(b * fd), x0(b * fd), weights(b * fd);
    std::vector<std::uint8_t> valid(b * cfg.horizon);
    std::vector<Condition> conds;
    conds.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        const PoseDemo& d = *batch[i];
        if (d.target.size() != fd || d.valid.size() != cfg.horizon) throw ShapeError("posedit_loss: demo layout");
        for (std::size_t j = 0; j < fd; ++j) {
            x1[i * fd + j] = static_cast<T>(d.target[j]);
            weights[i * fd + j] = d.valid[j / step_dims] ? T(1) : T(0);
        }
        std::copy(d.valid.begin(), d.valid.end(), valid.begin() + static_cast<std::ptrdiff_t>(i * cfg.horizon));
        conds.push_back(d.cond);
    }
    noise_rng.fill_normal<T>(x0);
    auto pairs = make_pairs(Tensor<T>({b, fd}, std::move(x0)), Tensor<T>({b, fd}, std::move(x1)), t_rng, cfg.schedule);
    Tensor<T> pred = model.forward(pairs.xt, pairs.t, conds, valid);
    return scale(squared_error_sum<T>(pred, pairs.target, weights), T(1) / static_cast<T>(b));
}

template <typename T>
PoseTrainResult<T> train_posedit(const std::vector<PoseDemo>& demos, const PoseDiTConfig& model_cfg,
                                 const PoseTrainConfig& cfg) {
    cfg.validate();
    if (demos.empty()) throw ConfigError("posedit train: no demonstrations");
    PoseTrainResult<T> res;
    Rng init_rng(Rng::derive(cfg.seed, 1));
    res.model = PoseDiT<T>(model_cfg, init_rng);
    const auto params = trainable(res.model.parameters());
    AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    AdamW<T> opt(params, oc);
    Rng data_rng(Rng::derive(cfg.seed, 2)), noise_rng(Rng::derive(cfg.seed, 3)), t_rng(Rng::derive(cfg.seed, 4));

    double window = 0.0;
    std::size_t window_n = 0;
    std::vector<const PoseDemo*> batch(cfg.batch_size);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (auto& d : batch) d = &demos[data_rng.below(demos.size())];
        opt.set_lr(warmup_cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup_steps, 0.05));
        opt.zero_grad();
        Tensor<T> loss;
        try {
            loss = posedit_loss(res.model, batch, noise_rng, t_rng);
        } catch (const NonFiniteError& e) {
            throw DivergenceError("posedit: non-finite loss at step " + std::to_string(step) + ": " + e.what());
        }
        const double l = static_cast<double>(loss.item());
        if (!std::isfinite(l)) throw DivergenceError("posedit: non-finite loss at step " + std::to_string(step));
        if (step == 0) res.first_loss = l;
        res.final_loss = l;
        backward(loss);
        clip_grad_norm(params, cfg.grad_clip);
        opt.step();
        window += l;
        ++window_n;
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            res.loss_curve.emplace_back(step + 1, window / static_cast<double>(window_n));
            window = 0.0;
            window_n = 0;
        }
    }
    res.model.reset_evaluations();
    return res;
}

template <typename T>
std::vector<PosePrediction> predict_trajectories(const PoseDiT<T>& model, const std::vector<Condition>& conds,
                                                 const std::vector<std::size_t>& horizons,
                                                 const std::vector<std::uint64_t>& seeds, std::size_t n_steps,
                                                 const Workspace& ws) {
    const auto& cfg = model.config();
    const std::size_t b = conds.size(), fd = cfg.flat_dim(), step_dims = kRoles * kPoseDims;
    if (horizons.size() != b || seeds.size() != b) throw ShapeError("predict: conds, horizons, seeds differ in length");
    if (n_steps == 0) throw ConfigError("predict: n_steps must be >= 1");
    if (b == 0) return {};
    std::vector<T> z0(b * fd);
    std::vector<std::uint8_t> valid(b * cfg.horizon, 0);
    for (std::size_t i = 0; i < b; ++i) {
        if (horizons[i] == 0 || horizons[i] > cfg.horizon) {
            throw ShapeError("predict: plan horizon " + std::to_string(horizons[i]) + " outside [1, " +
                             std::to_string(cfg.horizon) + "]");
        }
        Rng rng(seeds[i]);
        rng.fill_normal<T>(std::span<T>(z0).subspan(i * fd, fd));
        std::fill_n(valid.begin() + static_cast<std::ptrdiff_t>(i * cfg.horizon), horizons[i], 1);
    }
    auto v = model.fn(conds, valid);
    auto sample = euler_sample<T>(v, Tensor<T>({b, fd}, std::move(z0)), n_steps);

    std::vector<PosePrediction> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> flat(horizons[i] * step_dims);
        for (std::size_t j = 0; j < flat.size(); ++j) flat[j] = static_cast<double>(sample.z1.data()[i * fd + j]);
        auto& p = out[i];
        p.trajectory = denormalize(flat, horizons[i], ws);
        p.evaluations = sample.evaluations;
        for (auto& step : p.trajectory.steps) {
            for (auto& pose : step) {
                double* pos[3] = {&pose.x, &pose.y, &pose.z};
                for (std::size_t d = 0; d < 3; ++d) {
                    const double c = std::clamp(*pos[d], ws.lo[d], ws.hi[d]);
                    if (c != *pos[d]) p.clamped = true;
                    *pos[d] = c;
                }
                pose.roll = wrap_angle(pose.roll);
                pose.pitch = wrap_angle(pose.pitch);
                pose.yaw = wrap_angle(pose.yaw);
            }
        }
    }
    return out;
}

template <typename T>
PosePrediction predict_trajectory(const PoseDiT<T>& model, const Condition& cond, std::size_t horizon,
                                  std::uint64_t seed, std::size_t n_steps, const Workspace& ws) {
    return predict_trajectories(model, {cond}, {horizon}, {seed}, n_steps, ws).front();
}

std::string trajectory_to_json(const PoseTrajectory& traj, const TrajectoryMeta& meta) {
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& step : traj.steps) {
        nlohmann::json pair = nlohmann::json::array();
        for (const auto& pose : step) pair.push_back(pose.to_array());
        poses.push_back(std::move(pair));
    }
    nlohmann::ordered_json j;
    j["task_id"] = meta.task_id;
    j["seed"] = meta.seed;
    j["n_steps"] = meta.n_steps;
    j["clamped"] = meta.clamped;
    j["poses"] = std::move(poses);
    return j.dump(2);
}

PoseTrajectory trajectory_from_json(const std::string& text, TrajectoryMeta* meta) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        PoseTrajectory traj;
        for (const auto& step : j.at("poses")) {
            if (step.size() != kRoles) throw Error("trajectory json: each step needs a pick and a place pose");
            std::array<Pose6D, kRoles> s;
            for (std::size_t r = 0; r < kRoles; ++r) s[r] = Pose6D::from_array(step[r].get<std::vector<double>>());
            traj.steps.push_back(s);
        }
        if (meta) {
            meta->task_id = j.at("task_id").get<std::string>();
            meta->seed = j.at("seed").get<std::uint64_t>();
            meta->n_steps = j.at("n_steps").get<std::size_t>();
            meta->clamped = j.at("clamped").get<bool>();
        }
        return traj;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("trajectory json: ") + e.what());
    }
}

#define POSEMOE_INSTANTIATE(T)                                                                                       \
    template struct AttentionWeights<T>;                                                                             \
    template struct STDiTBlock<T>;                                                                                   \
    template class PoseDiT<T>;                                                                                       \
    template Tensor<T> timestep_features(std::span<const T>, std::size_t);                                           \
    template Tensor<T> posedit_loss(const PoseDiT<T>&, const std::vector<const PoseDemo*>&, Rng&, Rng&);             \
    template PoseTrainResult<T> train_posedit(const std::vector<PoseDemo>&, const PoseDiTConfig&,                    \
                                              const PoseTrainConfig&);                                               \
    template std::vector<PosePrediction> predict_trajectories(const PoseDiT<T>&, const std::vector<Condition>&,      \
                                                              const std::vector<std::size_t>&,                       \
                                                              const std::vector<std::uint64_t>&, std::size_t,        \
                                                              const Workspace&);                                     \
    template PosePrediction predict_trajectory(const PoseDiT<T>&, const Condition&, std::size_t, std::uint64_t,      \
                                               std::size_t, const Workspace&);

POSEMOE_INSTANTIATE(float)
POSEMOE_INSTANTIATE(double)
#undef POSEMOE_INSTANTIATE

}  // namespace posemoe
