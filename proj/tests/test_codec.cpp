#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "onrw/codec.hpp"
#include "onrw/ops.hpp"

#include <cmath>
#include <filesystem>

using namespace onrw;
using codec::BitMessage;

TEST_CASE("bit strings round trip and accuracy counts matching bits")
{
    const BitMessage m = BitMessage::parse("1011 0010");
    CHECK(m.size() == 8);
    CHECK(m.str() == "10110010");
    CHECK(BitMessage::parse(m.str()).bits == m.bits);
    CHECK_THROWS(BitMessage::parse("10x1"));
    CHECK_THROWS(BitMessage::parse(""));
    CHECK(codec::bit_accuracy(BitMessage::parse("1111"), BitMessage::parse("1100")) == doctest::Approx(0.5));
    CHECK_THROWS(codec::bit_accuracy(BitMessage::parse("1"), BitMessage::parse("10")));

    const Tensor t = m.as_tensor();
    CHECK(t.shape() == Shape{1, 8});
    CHECK(t[0] == 1.0f);
    CHECK(t[1] == 0.0f);
}

TEST_CASE("sampled messages are deterministic and balanced")
{
    CHECK(codec::sample_message(48, 5).bits == codec::sample_message(48, 5).bits);
    CHECK(codec::sample_message(48, 5).bits != codec::sample_message(48, 6).bits);
    int ones = 0;
    for (int s = 0; s < 100; ++s)
        for (auto b : codec::sample_message(48, s).bits) ones += b;
    CHECK(ones / 4800.0 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("decode loss is the summed squared sigmoid error")
{
    ag::Graph g;
    Tensor l({1, 3}, std::vector<float>{0.0f, 2.0f, -1.0f});
    const ag::Var loss = codec::decode_loss(g.constant(l), {BitMessage::parse("101")});
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const double expect = std::pow(sig(0) - 1, 2) + std::pow(sig(2), 2) + std::pow(sig(-1) - 1, 2);
    CHECK(loss.value()[0] == doctest::Approx(expect).epsilon(1e-6));

    const auto r = test::grad_check([](ag::Graph&, ag::Var v) { return codec::decode_loss(v, {BitMessage::parse("1100"), BitMessage::parse("0110")}); },
                                    Rng(2).normal_tensor({2, 4}), 0, 3);
    CHECK(r.passed == r.checked);
}

TEST_CASE("decoder gradients reach the input image")
{
    codec::Decoder dec({8, 32, 8, 4}, 11);
    const Tensor img = Rng(12).uniform_tensor({1, 3, 32, 32}, -1.0f, 1.0f);
    const Tensor w = Rng(13).normal_tensor({1, 8});
    const auto r = test::grad_check([&](ag::Graph& g, ag::Var v) { return ag::sum(ag::mul_const(dec.logits(g, v), w)); }, img, 30, 14);
    // ReLU-family kinks make a few probes straddle a corner.
    CHECK(r.passed >= 0.9 * r.checked);
}

TEST_CASE("an untrained decoder scores chance on 1000+ bits")
{
    codec::Decoder dec({16, 32, 16, 8}, 21);
    const data::Dataset ds = data::make_toy_dataset(80, 32, 22);
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) acc += codec::bit_accuracy(dec.decode(ds.images[i]).bits[0], codec::sample_message(16, 1000 + i));
    acc /= ds.size();
    CHECK(acc == doctest::Approx(0.5).epsilon(0.1));  // 0.5 +- 0.05
}

TEST_CASE("whitening standardizes logits on the fitting set and keeps decisions' sign convention")
{
    codec::Decoder dec({8, 32, 8, 4}, 31);
    const data::Dataset ds = data::make_toy_dataset(40, 32, 32);
    codec::fit_whitening(dec, ds.images);
    CHECK(dec.whitened());
    std::vector<double> s1(8, 0.0), s2(8, 0.0);
    for (const auto& img : ds.images) {
        const Tensor l = dec.decode(img).logits;
        for (int j = 0; j < 8; ++j) {
            s1[j] += l[j];
            s2[j] += l[j] * l[j];
        }
    }
    for (int j = 0; j < 8; ++j) {
        CHECK(s1[j] / 40 == doctest::Approx(0.0).epsilon(1e-3).scale(1.0));
        CHECK(s2[j] / 40 == doctest::Approx(1.0).epsilon(1e-3));
    }
    CHECK_THROWS(dec.set_whitening(Tensor({8}, 0.0f), Tensor({8}, -1.0f)));
}

TEST_CASE("decoder checkpoints round trip with whitening")
{
    codec::Decoder dec({8, 32, 8, 4}, 41);
    codec::fit_whitening(dec, data::make_toy_dataset(10, 32, 42).images);
    const std::string path = (std::filesystem::temp_directory_path() / "onrw_test_decoder.onrw").string();
    dec.save(path, {{"note", "test"}});
    nlohmann::json meta;
    const codec::Decoder back = codec::Decoder::load(path, &meta);
    CHECK(meta["extra"]["note"] == "test");
    CHECK(back.checksum() == dec.checksum());
    const Tensor img = data::make_toy_dataset(1, 32, 43).images[0];
    CHECK(back.decode(img).logits == dec.decode(img).logits);
    std::filesystem::remove(path);
}

TEST_CASE("short decoder training learns the message on clean images")
{
    const data::Dataset train = data::make_toy_dataset(64, 32, 51), held = data::make_toy_dataset(16, 32, 52);
    codec::DecoderTrainConfig tc;
    tc.steps = 500;
    tc.batch = 16;
    tc.use_attacks = false;
    tc.log_every = 50;
    codec::DecoderTrainReport rep;
    codec::train_decoder(train, held, {8, 32, 8, 4}, tc, 53, &rep);
    INFO("clean " << rep.clean_accuracy << " curve end " << rep.curve.back().second);
    CHECK(rep.curve.back().second < rep.curve.front().second);
    CHECK(rep.clean_accuracy > 0.7);
    CHECK(rep.residual_psnr > 20.0);
}

TEST_CASE("invalid decoder configs are rejected")
{
    CHECK_THROWS(codec::DecoderConfig{0, 32, 16, 8}.validate());
    CHECK_THROWS(codec::DecoderConfig{16, 48, 16, 8}.validate());
    CHECK_THROWS(codec::DecoderConfig{16, 32, 12, 8}.validate());
}
