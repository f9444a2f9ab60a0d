#include "onrw/inversion.hpp"

#include "onrw/archive.hpp"
#include "onrw/hash.hpp"
#include "onrw/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace onrw::inversion {

using ag::Var;

namespace {

nn::Bound frozen(ag::Graph& g, const diffusion::DiffusionModel& m)
{
    return nn::Bound(g, const_cast<nn::ParameterStore&>(m.params()), false);
}

}  // namespace

LatentTrajectory ddim_invert(const Sampler& sampler, const Tensor& x0, const ConditionEmbedding& cond, float guidance)
{
    sampler.check_image(x0);
    if (!x0.all_finite()) throw std::invalid_argument("ddim_invert: input is not finite");
    const auto& model = sampler.model();
    LatentTrajectory traj;
    traj.guidance = guidance;
    traj.cond = cond;
    traj.states.push_back(x0);
    const ConditionEmbedding null = model.null_embedding();
    for (int k = 1; k <= sampler.steps(); ++k) {
        ag::Graph g;
        nn::Bound p = frozen(g, model);
        Var x = g.constant(traj.states.back());
        Var eps = sampler.guided_noise(p, x, k, g.constant(cond.tokens), g.constant(null.tokens), guidance, nullptr);
        traj.states.push_back(sampler.inversion_step(x, eps, k).value());
        traj.null_embeddings.push_back(null);
    }
    return traj;
}

LatentTrajectory null_text_optimize(const Sampler& sampler, const LatentTrajectory& pivot, const ConditionEmbedding& cond,
                                    float guidance, const NullTextOptions& opt, NullTextReport* report)
{
    const auto& model = sampler.model();
    pivot.validate(model.image_shape());
    if (pivot.steps() != sampler.steps()) throw std::invalid_argument("null_text_optimize: pivot step count differs from sampler");
    if (opt.inner_iters < 1) throw std::invalid_argument("null_text_optimize: inner_iters must be >= 1");
    if (guidance < 0.0f) throw std::invalid_argument("null_text_optimize: negative guidance");
    const int T = sampler.steps();
    const int tpc = model.config().tokens_per_class, dim = model.config().token_dim;

    LatentTrajectory out;
    out.states.assign(T + 1, Tensor());
    out.states[T] = pivot.xT();
    out.null_embeddings.assign(T, ConditionEmbedding());
    out.guidance = guidance;
    out.cond = cond;
    NullTextReport rep;
    rep.initial_loss.assign(T, 0.0);
    rep.final_loss.assign(T, 0.0);
    rep.accepted_steps.assign(T, 0);

    Tensor phi = model.null_embedding().tokens;
    for (int k = T; k >= 1; --k) {
        const Tensor& x_k = out.states[k];
        const Tensor& target = pivot.states[k - 1];
        const int tau = sampler.timestep(k);

        // The conditional branch does not depend on phi; evaluate it once.
        Tensor eps_cond;
        if (guidance != 0.0f) {
            ag::Graph g;
            nn::Bound p = frozen(g, model);
            Var ctx = ag::reshape(g.constant(cond.tokens), {1, tpc, dim});
            eps_cond = model.predict_noise(p, g.constant(x_k), {tau}, ctx, nullptr).value();
        }
        // Loss ||x_{k-1}(phi) - pivot x_{k-1}||^2 and optionally its gradient in phi.
        auto evaluate = [&](const Tensor& ph, Tensor* grad, Tensor* step_out) {
            ag::Graph g;
            nn::Bound p = frozen(g, model);
            Var phv = grad ? g.leaf(ph) : g.constant(ph);
            Var x = g.constant(x_k);
            Var eps;
            if (guidance == 1.0f) {
                eps = g.constant(eps_cond);
            } else {
                Var e_null = model.predict_noise(p, x, {tau}, ag::reshape(phv, {1, tpc, dim}), nullptr);
                eps = guidance == 0.0f ? e_null
                                       : ag::add(ag::scale(e_null, 1.0f - guidance), ag::scale(g.constant(eps_cond), guidance));
            }
            Var x_prev = sampler.ddim_step(x, eps, k);
            Var loss = ag::sum_squares(ag::sub(x_prev, g.constant(target)));
            const double lv = loss.value()[0];
            if (!std::isfinite(lv)) throw std::runtime_error("null_text_optimize: non-finite loss at step " + std::to_string(k));
            if (grad) {
                g.backward(loss);
                *grad = g.grad(phv).empty() ? Tensor(ph.shape(), 0.0f) : g.grad(phv);
            }
            if (step_out) *step_out = x_prev.value();
            return lv;
        };

        Tensor grad;
        double loss = evaluate(phi, &grad, nullptr);
        rep.initial_loss[k - 1] = loss;
        for (int it = 0; it < opt.inner_iters && loss >= opt.early_stop && opt.lr != 0.0f; ++it) {
            if (it > 0) loss = evaluate(phi, &grad, nullptr);
            bool accepted = false;
            float lr = opt.lr;
            for (int h = 0; h <= opt.max_halvings; ++h, lr *= 0.5f) {
                Tensor trial = phi;
                for (std::size_t i = 0; i < trial.size(); ++i) trial[i] -= lr * grad[i];
                const double trial_loss = evaluate(trial, nullptr, nullptr);
                if (trial_loss <= loss) {
                    phi = std::move(trial);
                    loss = trial_loss;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;  // even the smallest step made things worse
            ++rep.accepted_steps[k - 1];
        }
        rep.final_loss[k - 1] = evaluate(phi, nullptr, &out.states[k - 1]);
        out.null_embeddings[k - 1] = {phi, true};
    }
    if (report) *report = std::move(rep);
    return out;
}

Tensor reconstruct(const Sampler& sampler, const LatentTrajectory& traj)
{
    if (traj.null_embeddings.empty() && traj.steps() > 0) throw std::invalid_argument("reconstruct: trajectory has no null embeddings");
    if (traj.steps() != sampler.steps()) throw std::invalid_argument("reconstruct: trajectory step count differs from sampler");
    if (traj.steps() == 0) return traj.xT();
    return sampler.denoise_trajectory(traj.xT(), traj.cond, traj.null_embeddings, traj.guidance, false).x0();
}

void save_trajectory(const std::string& path, const LatentTrajectory& traj, std::uint64_t config_hash)
{
    Archive a;
    a.meta = {{"kind", "onrw-trajectory"}, {"steps", traj.steps()}, {"guidance", traj.guidance},
              {"cond_is_null", traj.cond.is_null}, {"config_hash", hex64(config_hash)}};
    for (int k = 0; k <= traj.steps(); ++k) a.put("state/" + std::to_string(k), traj.states[k]);
    for (std::size_t k = 0; k < traj.null_embeddings.size(); ++k) a.put("null/" + std::to_string(k), traj.null_embeddings[k].tokens);
    a.put("cond", traj.cond.tokens);
    a.save(path);
}

LatentTrajectory load_trajectory(const std::string& path, std::uint64_t* config_hash)
{
    const Archive a = Archive::load(path);
    if (a.meta.value("kind", "") != "onrw-trajectory") throw std::runtime_error(path + " is not a trajectory archive");
    LatentTrajectory t;
    const int steps = a.meta.at("steps");
    t.guidance = a.meta.at("guidance");
    t.cond = {a.get("cond"), a.meta.at("cond_is_null")};
    for (int k = 0; k <= steps; ++k) t.states.push_back(a.get("state/" + std::to_string(k)));
    for (int k = 0; k < steps && a.has("null/" + std::to_string(k)); ++k) t.null_embeddings.push_back({a.get("null/" + std::to_string(k)), true});
    if (config_hash) *config_hash = std::stoull(a.meta.at("config_hash").get<std::string>(), nullptr, 16);
    return t;
}

}  // namespace onrw::inversion
