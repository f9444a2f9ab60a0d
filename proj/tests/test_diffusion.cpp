#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "onrw/diffusion.hpp"
#include "onrw/ops.hpp"

#include <cmath>
#include <filesystem>

using namespace onrw;
using namespace onrw::diffusion;

namespace {

ModelConfig small_config(int steps = 5)
{
    ModelConfig c;
    c.ch1 = 16;
    c.ch2 = 16;
    c.attn_dim = 16;
    c.token_dim = 16;
    c.time_dim = 16;
    c.embed_dim = 32;
    c.ddim_steps = steps;
    return c;
}

const DiffusionModel& small_model()
{
    static const DiffusionModel m(small_config(), 7);
    return m;
}

}  // namespace

TEST_CASE("linear schedule matches the closed-form cumulative product")
{
    const NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4, 0.02);
    s.validate();
    double prod = 1.0;
    for (int t = 0; t < 1000; ++t) {
        const double beta = 1e-4 + (0.02 - 1e-4) * t / 999.0;
        CHECK(s.betas[t] == doctest::Approx(beta).epsilon(1e-12));
        prod *= 1.0 - beta;
        CHECK(s.alphas_cumprod[t] == doctest::Approx(prod).epsilon(1e-9));
    }
    CHECK(s.alpha_bar(-1) == 1.0);
    NoiseSchedule broken = s;
    broken.alphas_cumprod[10] *= 1.01;
    CHECK_THROWS(broken.validate());
    CHECK_THROWS(NoiseSchedule::linear(10, 0.5, 1.0).validate());
}

TEST_CASE("DDIM timesteps are evenly strided from zero")
{
    const Sampler s(small_model(), 5);
    for (int k = 1; k <= 5; ++k) CHECK(s.timestep(k) == (k - 1) * 200);
    CHECK(s.alpha_bar_state(0) == 1.0);
    CHECK_THROWS(s.timestep(0));
    CHECK_THROWS(s.timestep(6));
}

TEST_CASE("DDIM step follows the deterministic update and inversion undoes it")
{
    const Sampler s(small_model(), 5);
    Rng rng(3);
    const Tensor x = rng.normal_tensor({1, 3, 32, 32}), eps = rng.normal_tensor({1, 3, 32, 32});
    ag::Graph g;
    for (int k = 1; k <= 5; ++k) {
        const Tensor prev = s.ddim_step(g.constant(x), g.constant(eps), k).value();
        const double a = s.alpha_bar_state(k), ap = s.alpha_bar_state(k - 1);
        for (std::size_t i = 0; i < x.size(); i += 97) {
            const double x0 = (x[i] - std::sqrt(1 - a) * eps[i]) / std::sqrt(a);
            CHECK(prev[i] == doctest::Approx(std::sqrt(ap) * x0 + std::sqrt(1 - ap) * eps[i]).epsilon(1e-4));
        }
        const Tensor back = s.inversion_step(g.constant(prev), g.constant(eps), k).value();
        CHECK(max_abs_diff(back, x) < 1e-4f);
    }
}

TEST_CASE("guidance limits evaluate a single branch exactly")
{
    const DiffusionModel& m = small_model();
    const Sampler s(m, 5);
    const Tensor x = Rng(4).normal_tensor({1, 3, 32, 32});
    const auto cond = m.condition(2), nul = m.null_embedding();
    auto eps = [&](float g, const ConditionEmbedding& c, const ConditionEmbedding& n) {
        return s.denoise_step(x, 3, c, n, g, false).output.predicted_noise;
    };
    // g = 1 ignores the null tokens; g = 0 ignores the condition.
    CHECK(eps(1.0f, cond, nul) == eps(1.0f, cond, m.condition(1)));
    CHECK(eps(0.0f, cond, nul) == eps(0.0f, m.condition(0), nul));
    const Tensor e0 = eps(0.0f, cond, nul), e1 = eps(1.0f, cond, nul), e3 = eps(3.0f, cond, nul);
    for (std::size_t i = 0; i < e0.size(); i += 31) CHECK(e3[i] == doctest::Approx(e0[i] + 3.0f * (e1[i] - e0[i])).epsilon(1e-3));
}

TEST_CASE("captured attention rows are distributions")
{
    const DiffusionModel& m = small_model();
    const Sampler s(m, 5);
    const auto r = s.denoise_step(Rng(5).normal_tensor({1, 3, 32, 32}), 5, m.condition(0), m.null_embedding(), 4.5f, true);
    REQUIRE(r.output.attention);
    CHECK_FALSE(r.output.attention->cross_maps.empty());
    CHECK_FALSE(r.output.attention->self_maps.empty());
    CHECK(r.output.attention->max_row_error() < 1e-5f);
    bool both = false, cond = false;
    for (const auto& c : r.output.attention->cross_maps) {
        both |= !c.conditional;
        cond |= c.conditional;
        CHECK(c.probs.dim(0) == c.height * c.width);
        CHECK(c.probs.dim(1) == m.config().tokens_per_class + 1);  // anchor key + condition tokens
    }
    CHECK((both && cond));
}

TEST_CASE("noise prediction is differentiable in the input image")
{
    const DiffusionModel& m = small_model();
    const Tensor x = Rng(6).normal_tensor({1, 3, 32, 32}), w = Rng(7).normal_tensor({1, 3, 32, 32});
    const auto r = test::grad_check(
        [&](ag::Graph& g, ag::Var v) {
            nn::Bound p(g, const_cast<nn::ParameterStore&>(m.params()), false);
            return ag::sum(ag::mul_const(m.predict_noise(p, v, {400}, gather_context(p, m.config(), {1}), nullptr), w));
        },
        x, 30, 8, 1e-2f);
    CHECK(r.passed >= 0.9 * r.checked);
}

TEST_CASE("add_noise uses sqrt(abar) and sqrt(1 - abar)")
{
    const Sampler s(small_model(), 5);
    const Tensor x0({1, 3, 32, 32}, 0.5f), z({1, 3, 32, 32}, -1.0f);
    const Tensor xt = add_noise(s, x0, 4, z);
    const double a = s.alpha_bar_state(4);
    CHECK(xt[0] == doctest::Approx(std::sqrt(a) * 0.5 - std::sqrt(1 - a)).epsilon(1e-6));
    CHECK(add_noise(s, x0, 0, z) == x0);
}

TEST_CASE("training is deterministic and lowers the loss; checkpoints round trip")
{
    const data::Dataset ds = data::make_toy_dataset(32, 32, 9);
    TrainConfig tc;
    tc.steps = 60;
    tc.batch = 8;
    tc.log_every = 20;
    TrainReport r1, r2;
    const DiffusionModel a = train_toy_model(ds, small_config(), tc, 10, &r1);
    const DiffusionModel b = train_toy_model(ds, small_config(), tc, 10, &r2);
    CHECK(a.checksum() == b.checksum());
    CHECK(r1.final_loss == r2.final_loss);
    CHECK(r1.curve.back().second < r1.curve.front().second);

    const std::string path = (std::filesystem::temp_directory_path() / "onrw_test_model.onrw").string();
    a.save(path);
    const DiffusionModel c = DiffusionModel::load(path);
    CHECK(c.checksum() == a.checksum());
    CHECK(c.config().to_json() == a.config().to_json());
    std::filesystem::remove(path);
}

TEST_CASE("invalid inputs are rejected")
{
    ModelConfig bad = small_config();
    bad.resolution = 48;
    CHECK_THROWS(bad.validate());
    const Sampler s(small_model(), 5);
    CHECK_THROWS(s.check_image(Tensor({1, 3, 16, 16})));
    CHECK_THROWS(small_model().condition(9));
    data::Dataset empty;
    CHECK_THROWS(train_toy_model(empty, small_config(), TrainConfig{}, 1));
}
