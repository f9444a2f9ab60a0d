#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "onrw/inversion.hpp"

#include <cmath>
#include <filesystem>

using namespace onrw;
using namespace onrw::diffusion;

namespace {

const DiffusionModel& model()
{
    static const DiffusionModel m = [] {
        ModelConfig c;
        c.ch1 = 16;
        c.ch2 = 16;
        c.attn_dim = 16;
        c.token_dim = 16;
        c.time_dim = 16;
        c.embed_dim = 32;
        c.ddim_steps = 6;
        TrainConfig tc;
        tc.steps = 40;
        tc.batch = 8;
        return train_toy_model(data::make_toy_dataset(32, 32, 1), c, tc, 2);
    }();
    return m;
}

double mse(const Tensor& a, const Tensor& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / a.size();
}

}  // namespace

TEST_CASE("DDIM inversion produces a full pivot anchored at the image")
{
    const Sampler s(model());
    const data::Dataset ds = data::make_toy_dataset(1, 32, 3);
    const LatentTrajectory pivot = inversion::ddim_invert(s, ds.images[0], model().condition(ds.labels[0]));
    CHECK(pivot.steps() == 6);
    CHECK(pivot.x0() == ds.images[0]);
    CHECK(pivot.null_embeddings.size() == 6);
    pivot.validate(model().image_shape());
    // x_T carries far more noise energy than x_0 structure after inversion.
    CHECK(max_abs_diff(pivot.xT(), pivot.x0()) > 0.1f);
}

TEST_CASE("null-text optimization lowers every step loss and its states replay exactly")
{
    const Sampler s(model());
    const data::Dataset ds = data::make_toy_dataset(2, 32, 4);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto cond = model().condition(ds.labels[i]);
        const LatentTrajectory pivot = inversion::ddim_invert(s, ds.images[i], cond);
        inversion::NullTextReport rep;
        const LatentTrajectory opt = inversion::null_text_optimize(s, pivot, cond, 4.5f, {}, &rep);
        REQUIRE(rep.final_loss.size() == 6);
        for (std::size_t k = 0; k < rep.final_loss.size(); ++k) CHECK(rep.final_loss[k] <= rep.initial_loss[k] + 1e-12);
        // States of the optimized trajectory are what its null schedule actually produces.
        const LatentTrajectory replay = s.denoise_trajectory(opt.xT(), cond, opt.null_embeddings, 4.5f, false);
        for (int k = 0; k <= 6; ++k) CHECK(max_abs_diff(replay.states[k], opt.states[k]) < 1e-5f);
        CHECK(mse(inversion::reconstruct(s, opt), ds.images[i]) == doctest::Approx(mse(opt.x0(), ds.images[i])));
        CHECK(opt.guidance == 4.5f);
        CHECK(opt.states.back() == pivot.states.back());
    }
}

TEST_CASE("trajectories survive a save/load round trip")
{
    const Sampler s(model());
    const data::Dataset ds = data::make_toy_dataset(1, 32, 5);
    const auto cond = model().condition(ds.labels[0]);
    const LatentTrajectory t = inversion::null_text_optimize(s, inversion::ddim_invert(s, ds.images[0], cond), cond, 2.0f, {});
    const std::string path = (std::filesystem::temp_directory_path() / "onrw_test_traj.onrw").string();
    inversion::save_trajectory(path, t, 0xabcdefULL);
    std::uint64_t h = 0;
    const LatentTrajectory back = inversion::load_trajectory(path, &h);
    CHECK(h == 0xabcdefULL);
    CHECK(back.guidance == t.guidance);
    REQUIRE(back.states.size() == t.states.size());
    for (std::size_t k = 0; k < t.states.size(); ++k) CHECK(back.states[k] == t.states[k]);
    for (std::size_t k = 0; k < t.null_embeddings.size(); ++k) CHECK(back.null_embeddings[k].tokens == t.null_embeddings[k].tokens);
    CHECK(inversion::reconstruct(s, back) == inversion::reconstruct(s, t));
    std::filesystem::remove(path);
}

TEST_CASE("inversion rejects malformed inputs")
{
    const Sampler s(model());
    CHECK_THROWS(inversion::ddim_invert(s, Tensor({1, 3, 16, 16}), model().condition(0)));
    LatentTrajectory empty;
    CHECK_THROWS(inversion::null_text_optimize(s, empty, model().condition(0), 4.5f, {}));
    inversion::NullTextOptions bad;
    bad.inner_iters = -1;
    const auto pivot = inversion::ddim_invert(s, data::make_toy_dataset(1, 32, 6).images[0], model().condition(0));
    CHECK_THROWS(inversion::null_text_optimize(s, pivot, model().condition(0), 4.5f, bad));
}
