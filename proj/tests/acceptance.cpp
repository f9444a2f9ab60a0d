// Acceptance harness: one PASS/FAIL line per criterion on the cached toy
// artifacts and a 20-image evaluation set. Writes the raw numbers to
// acceptance.json next to the artifacts. Exits nonzero when any criterion fails.

#include "artifacts.hpp"
#include "gradcheck.hpp"

#include "onrw/bench.hpp"
#include "onrw/dwtdct.hpp"
#include "onrw/embedder.hpp"
#include "onrw/hash.hpp"
#include "onrw/image.hpp"
#include "onrw/metrics.hpp"
#include "onrw/ops.hpp"
#include "onrw/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>

using namespace onrw;
using json = nlohmann::json;

namespace {

constexpr int kImages = 20;
constexpr int kBits = 16;
constexpr std::uint64_t kMasterSeed = 2024;
constexpr float kGuidance = 4.5f;

double seconds_since(std::chrono::steady_clock::time_point t)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::uint64_t image_key(const Tensor& t) { return fnv1a(std::string_view(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float))); }

struct Verdict {
    int id;
    bool pass;
    std::string detail;
};

class Ledger {
public:
    void add(int id, bool pass, const std::string& detail)
    {
        verdicts_.push_back({id, pass, detail});
        std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
        std::fflush(stdout);
    }
    bool all() const
    {
        for (const auto& v : verdicts_)
            if (!v.pass) return false;
        return true;
    }
    json to_json() const
    {
        json j = json::array();
        for (const auto& v : verdicts_) j.push_back({{"criterion", v.id}, {"pass", v.pass}, {"detail", v.detail}});
        return j;
    }

private:
    std::vector<Verdict> verdicts_;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

double mean_abs01(const Tensor& a, const Tensor& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]) / 2.0;
    return s / a.size();
}

// The embeddings observed during one bench run, keyed by embed seed.
struct Recorder {
    std::mutex mu;
    std::map<std::uint64_t, embed::EmbedResult> results;
};

struct Variant {
    std::string name;
    embed::MaskMode mode;
    embed::Upsampling up;
};

}  // namespace

int main()
{
    const test::ArtifactRecipe recipe;
    const diffusion::DiffusionModel model = diffusion::DiffusionModel::load(test::artifact("model.onrw"));
    const diffusion::Sampler sampler(model);
    codec::Decoder decoder = codec::Decoder::load(test::artifact("decoder.onrw"));
    codec::fit_whitening(decoder, data::make_toy_dataset(200, recipe.resolution, 4242).images);
    const eval::Autoencoder ae = eval::Autoencoder::load(test::artifact("autoencoder.onrw"));
    const data::Dataset ds = data::make_toy_dataset(kImages, recipe.resolution, 777);
    const embed::EmbedConfig defaults;
    Ledger ledger;
    json raw;

    // 1. Null-text inversion against plain DDIM inversion at the same guidance.
    {
        const auto t0 = std::chrono::steady_clock::now();
        int improved = 0;
        std::vector<double> plain, nt;
        for (int i = 0; i < kImages; ++i) {
            const auto cond = model.condition(ds.labels[i]);
            const auto pivot = inversion::ddim_invert(sampler, ds.images[i], cond, 1.0f);
            diffusion::LatentTrajectory direct = pivot;
            direct.guidance = kGuidance;
            direct.cond = cond;
            const auto traj = inversion::null_text_optimize(sampler, pivot, cond, kGuidance, defaults.null_text);
            plain.push_back(eval::quality_metrics(image::quantize8(inversion::reconstruct(sampler, direct)), ds.images[i]).psnr);
            nt.push_back(eval::quality_metrics(image::quantize8(inversion::reconstruct(sampler, traj)), ds.images[i]).psnr);
            improved += nt.back() > plain.back();
        }
        const double secs = seconds_since(t0);
        raw["inversion"] = {{"plain_psnr", plain}, {"null_text_psnr", nt}, {"seconds", secs}};
        ledger.add(1, improved >= 0.9 * kImages && secs < 600.0,
                   fmt("improved %d/%d, mean PSNR %.2f -> %.2f dB, %.0f s", improved, kImages, mean(plain), mean(nt), secs));
    }

    // Preparations are message independent; both bench runs and every variant share them.
    std::vector<embed::Preparation> preps;
    std::vector<double> prep_seconds;
    std::map<std::uint64_t, int> index_of;
    for (int i = 0; i < kImages; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        preps.push_back(embed::prepare(sampler, ds.images[i], model.condition(ds.labels[i]), kGuidance, defaults.null_text));
        prep_seconds.push_back(seconds_since(t0));
        index_of[image_key(ds.images[i])] = i;
    }

    auto onrw = [&](const std::string& name, bool attacks, Recorder* rec) {
        eval::Method m;
        m.name = name;
        m.embed = [&, attacks, rec](const eval::BenchImage& b, const codec::BitMessage& msg, std::uint64_t seed) {
            embed::EmbedConfig e = defaults;
            e.message = msg;
            e.seed = seed;
            if (!attacks) e.attack_pool = attack::AttackPool::identity_only();
            embed::EmbedResult r = embed::embed(sampler, b.image, preps.at(index_of.at(image_key(b.image))), decoder, e);
            Tensor out = r.watermarked;
            if (rec) {
                std::lock_guard<std::mutex> lock(rec->mu);
                rec->results[seed] = std::move(r);
            }
            return out;
        };
        m.extract = [&](const Tensor& img, int) { return decoder.decode(img).bits.at(0); };
        return m;
    };

    std::vector<eval::BenchImage> images;
    for (int i = 0; i < kImages; ++i) images.push_back({ds.images[i], ds.labels[i]});
    eval::BenchConfig bcfg;
    bcfg.k = kBits;
    bcfg.master_seed = kMasterSeed;
    const auto extras = cli::removal_attacks(sampler, {0.1, 0.3, 0.5}, &ae);

    Recorder rec;
    const auto tb = std::chrono::steady_clock::now();
    const eval::BenchReport report =
        eval::run_benchmark({onrw("ONRW", true, &rec), onrw("NoAttack", false, nullptr), cli::dwtdct_method()}, images, bcfg, extras);
    raw["bench_seconds"] = seconds_since(tb);
    raw["bench"] = report.to_json();
    std::printf("bench finished in %.0f s\n%s", seconds_since(tb), report.to_csv().c_str());

    auto seed_of = [&](const std::string& method, int i) { return derive_seed(kMasterSeed, "embed/" + method, i); };
    auto message_of = [&](int i) { return codec::sample_message(kBits, derive_seed(kMasterSeed, "bench-message", i)); };

    // 2. Clean accuracy and per-image runtime of the default embed.
    std::vector<double> clean, per_image;
    for (int i = 0; i < kImages; ++i) {
        const auto& r = rec.results.at(seed_of("ONRW", i));
        clean.push_back(codec::bit_accuracy(decoder.decode(r.watermarked).bits.at(0), message_of(i)));
        per_image.push_back(prep_seconds[i] + r.seconds);
    }
    const double slowest = *std::max_element(per_image.begin(), per_image.end());
    ledger.add(2, mean(clean) >= 0.95 && slowest < 120.0,
               fmt("mean clean accuracy %.4f, slowest image %.1f s (mean %.1f s)", mean(clean), slowest, mean(per_image)));
    raw["clean_accuracy"] = clean;

    // 3. Attack layer ablation on the attacked rows of the suite.
    auto attacked_mean = [&](const std::string& method) {
        std::vector<double> v;
        for (const auto& row : report.rows)
            if (row.name != "None") v.push_back(report.cell(row.name, method).accuracy);
        return mean(v);
    };
    const double with = attacked_mean("ONRW"), without = attacked_mean("NoAttack");
    ledger.add(3, with - without >= 0.02, fmt("attacked mean %.4f with the attack layer vs %.4f without (margin %+.4f)", with, without, with - without));

    // 4 and 5. Mask variants with the same messages and seeds as the default run.
    const std::vector<Variant> variants = {{"soft+nearest", embed::MaskMode::soft, embed::Upsampling::nearest},
                                           {"hard+bilinear", embed::MaskMode::hard, embed::Upsampling::bilinear},
                                           {"hard+nearest", embed::MaskMode::hard, embed::Upsampling::nearest},
                                           {"none", embed::MaskMode::none, embed::Upsampling::bilinear}};
    std::map<std::string, std::vector<double>> psnr, acc;
    std::vector<const embed::EmbedResult*> all_runs;
    for (int i = 0; i < kImages; ++i) {
        const auto& r = rec.results.at(seed_of("ONRW", i));
        psnr["soft+bilinear"].push_back(eval::quality_metrics(r.watermarked, ds.images[i]).psnr);
        acc["soft+bilinear"].push_back(clean[i]);
        all_runs.push_back(&r);
    }
    std::vector<embed::EmbedResult> variant_runs;
    variant_runs.reserve(variants.size() * kImages);
    int hard_checked = 0, hard_mismatch = 0;
    for (const auto& v : variants) {
        for (int i = 0; i < kImages; ++i) {
            embed::EmbedConfig e = defaults;
            e.message = message_of(i);
            e.seed = seed_of("ONRW", i);
            e.mask_mode = v.mode;
            e.upsampling = v.up;
            variant_runs.push_back(embed::embed(sampler, ds.images[i], preps[i], decoder, e));
            const auto& r = variant_runs.back();
            psnr[v.name].push_back(eval::quality_metrics(r.watermarked, ds.images[i]).psnr);
            acc[v.name].push_back(codec::bit_accuracy(decoder.decode(r.watermarked).bits.at(0), e.message));
            if (v.mode == embed::MaskMode::hard) {
                const Tensor& m = r.mask.effective();
                const int hw = m.dim(0) * m.dim(1);
                for (int c = 0; c < 3; ++c)
                    for (int p = 0; p < hw; ++p)
                        if (m[p] == 0.0f) {
                            ++hard_checked;
                            const std::size_t idx = std::size_t(c) * hw + p;
                            hard_mismatch += std::memcmp(r.watermarked.data() + idx, ds.images[i].data() + idx, sizeof(float)) != 0;
                        }
            }
        }
        std::printf("variant %s: PSNR %.2f dB, accuracy %.4f\n", v.name.c_str(), mean(psnr[v.name]), mean(acc[v.name]));
        std::fflush(stdout);
    }
    for (const auto& r : variant_runs) all_runs.push_back(&r);
    {
        const double sb = mean(psnr["soft+bilinear"]), sn = mean(psnr["soft+nearest"]), hb = mean(psnr["hard+bilinear"]),
                     hn = mean(psnr["hard+nearest"]), no = mean(psnr["none"]);
        const double hard_acc = std::max(mean(acc["hard+bilinear"]), mean(acc["hard+nearest"]));
        const bool order = sb >= sn && sn >= std::max(hb, hn) && std::min(hb, hn) >= no;
        ledger.add(4, order && sb - no >= 1.0 && mean(acc["soft+bilinear"]) >= hard_acc,
                   fmt("PSNR soft+bilinear %.2f, soft+nearest %.2f, hard+bilinear %.2f, hard+nearest %.2f, none %.2f; "
                       "accuracy soft %.4f vs hard %.4f",
                       sb, sn, hb, hn, no, mean(acc["soft+bilinear"]), hard_acc));
        raw["mask_variants"] = {{"psnr", psnr}, {"accuracy", acc}};
    }
    ledger.add(5, hard_checked > 0 && hard_mismatch == 0,
               fmt("%d background pixels checked, %d differ", hard_checked, hard_mismatch));

    // 6. Differentiable JPEG against libjpeg, and its straight-through gradient.
    {
        std::string detail;
        bool ok = true;
        for (int q : {50, 80, 95}) {
            double d = 0.0;
            for (const auto& img : ds.images) d += mean_abs01(attack::apply({attack::Kind::jpeg, float(q), 0}, img), image::jpeg_roundtrip(img, q));
            d /= kImages;
            ok &= d <= 0.06;
            detail += fmt("q%d |diff| %.4f; ", q, d);
        }
        int checked = 0, passed = 0;
        const Tensor small = data::make_toy_dataset(1, 16, 21).images[0];
        const Tensor w = Rng(22).normal_tensor({1, 3, 16, 16});
        for (float q : {50.0f, 80.0f, 95.0f}) {
            auto weighted = [&](bool ste) -> test::ScalarFn {
                return [&, ste, q](ag::Graph&, ag::Var v) { return ag::sum(ag::mul_const(attack::differentiable_jpeg(v, q, {true, ste}), w)); };
            };
            // The STE backward is checked against differences of the unrounded forward.
            const Tensor ste = test::analytic_grad(weighted(true), small), smooth = test::analytic_grad(weighted(false), small);
            ok &= max_abs_diff(ste, smooth) < 1e-5f;
            const auto r = test::grad_check(weighted(false), small, 100, 23 + int(q), 1e-2f);
            checked += r.checked;
            passed += r.passed;
        }
        ok &= passed >= 0.9 * checked;
        ledger.add(6, ok, detail + fmt("gradient probes within 1e-2: %d/%d", passed, checked));
    }

    // 7. Logged totals against the weighted sum over every run above.
    {
        double worst = 0.0;
        std::size_t iters = 0;
        for (const auto* r : all_runs)
            for (const auto& l : r->loss_history) {
                const double expect = double(defaults.alpha) * l.decode + double(defaults.beta) * l.self_attention + double(defaults.gamma) * l.mse;
                worst = std::max(worst, std::fabs(l.total - expect) / std::max(std::fabs(expect), 1e-30));
                ++iters;
            }
        ledger.add(7, iters > 0 && worst <= 1e-6, fmt("%zu iterations, worst relative error %.3g", iters, worst));
    }

    // 8. Chance controls: untrained decoders on watermarked images, the trained one on clean images.
    {
        int untrained_bits = 0;
        double untrained_hits = 0.0;
        for (std::uint64_t s = 0; s < 4; ++s) {
            codec::Decoder fresh(decoder.config(), 1000 + s);
            codec::fit_whitening(fresh, data::make_toy_dataset(200, recipe.resolution, 4242).images);
            for (int i = 0; i < kImages; ++i) {
                untrained_hits += kBits * codec::bit_accuracy(fresh.decode(rec.results.at(seed_of("ONRW", i)).watermarked).bits.at(0), message_of(i));
                untrained_bits += kBits;
            }
        }
        const data::Dataset clean_set = data::make_toy_dataset(100, recipe.resolution, 31337);
        int clean_bits = 0;
        double clean_hits = 0.0;
        for (std::size_t i = 0; i < clean_set.size(); ++i) {
            clean_hits += kBits * codec::bit_accuracy(decoder.decode(clean_set.images[i]).bits.at(0), codec::sample_message(kBits, 500 + i));
            clean_bits += kBits;
        }
        const double u = untrained_hits / untrained_bits, c = clean_hits / clean_bits;
        ledger.add(8, std::fabs(u - 0.5) <= 0.05 && std::fabs(c - 0.5) <= 0.05 && untrained_bits >= 1000 && clean_bits >= 1000,
                   fmt("untrained decoder %.4f over %d bits, unwatermarked images %.4f over %d bits", u, untrained_bits, c, clean_bits));
    }

    // 9. A second identical bench run and the Average row.
    {
        const auto t0 = std::chrono::steady_clock::now();
        const eval::BenchReport again =
            eval::run_benchmark({onrw("ONRW", true, nullptr), onrw("NoAttack", false, nullptr), cli::dwtdct_method()}, images, bcfg, extras);
        const bool same = again.to_csv() == report.to_csv() && again.extras_csv() == report.extras_csv();
        const eval::CsvTable t = eval::parse_csv(report.to_csv());
        double worst = 0.0;
        for (std::size_t c = 1; c < t.header.size(); ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r + 1 < t.rows.size(); ++r) s += std::stod(t.rows[r][c]);
            worst = std::max(worst, std::fabs(s / (t.rows.size() - 1) - std::stod(t.rows.back()[c])));
        }
        ledger.add(9, same && worst <= 1e-9 && t.rows.back()[0] == "Average",
                   fmt("CSVs %s, worst Average deviation %.3g (rerun %.0f s)", same ? "identical" : "differ", worst, seconds_since(t0)));
    }

    // 10. Suite average against the DWT-DCT baseline.
    {
        const double a = report.average(0), b = report.average(2);
        ledger.add(10, a - b >= 0.10, fmt("ONRW %.4f vs DwtDct %.4f (margin %+.4f)", a, b, a - b));
    }

    // 11. Monotone degradation under regeneration and autoencoder compression.
    {
        auto extra = [&](const std::string& name) {
            for (const auto& row : report.extras)
                if (row.name == name) return row.cells.at(0).accuracy;
            throw std::runtime_error("missing extra attack " + name);
        };
        const std::vector<double> regen = {extra("Regen_0.10"), extra("Regen_0.30"), extra("Regen_0.50")};
        std::vector<double> ae_acc;  // widest bottleneck first
        for (int l = ae.config().levels_count(); l >= 1; --l) ae_acc.push_back(extra("AE_" + std::to_string(l)));
        auto monotone = [](const std::vector<double>& v) {
            for (std::size_t i = 1; i < v.size(); ++i)
                if (v[i] > v[i - 1] + 0.03) return false;
            return true;
        };
        std::string detail = "regeneration";
        for (double v : regen) detail += fmt(" %.4f", v);
        detail += "; autoencoder wide to narrow";
        for (double v : ae_acc) detail += fmt(" %.4f", v);
        ledger.add(11, monotone(regen) && monotone(ae_acc), detail);
    }

    raw["criteria"] = ledger.to_json();
    std::ofstream(test::artifact("acceptance.json")) << raw.dump(2) << "\n";
    std::printf("%s\n", ledger.all() ? "all criteria passed" : "some criteria failed");
    return ledger.all() ? 0 : 1;
}
