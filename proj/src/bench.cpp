#include "onrw/bench.hpp"

#include "onrw/hash.hpp"
#include "onrw/rng.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace onrw::eval {

using json = nlohmann::json;

namespace {

std::string fixed(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12f", v);
    return buf;
}

std::string cell_text(const Cell& c) { return c.failed() ? "failed" : fixed(c.accuracy); }

// Per-image outcome for one method: accuracy per suite row and per extra, NaN on failure.
struct ImageResult {
    bool embedded = false;
    Quality quality;
    std::vector<double> suite, extra;
    std::vector<std::string> errors;
};

ImageResult evaluate_image(const Method& method, const BenchImage& img, int index, const BenchConfig& cfg,
                           const std::vector<ExtraAttack>& extras)
{
    ImageResult r;
    r.suite.assign(cfg.points.size(), std::nan(""));
    r.extra.assign(extras.size(), std::nan(""));
    const codec::BitMessage msg = codec::sample_message(cfg.k, derive_seed(cfg.master_seed, "bench-message", index));
    Tensor marked;
    try {
        marked = method.embed(img, msg, derive_seed(cfg.master_seed, "embed/" + method.name, index));
        r.quality = quality_metrics(marked, img.image);
        r.embedded = true;
    } catch (const std::exception& e) {
        r.errors.push_back(method.name + " embed image " + std::to_string(index) + ": " + e.what());
        return r;
    }
    auto score = [&](const std::string& tag, auto&& attack) {
        try {
            const Tensor seen = attack(derive_seed(cfg.master_seed, "cell/" + method.name + "/" + tag, index));
            return codec::bit_accuracy(method.extract(seen, cfg.k), msg);
        } catch (const std::exception& e) {
            r.errors.push_back(method.name + " " + tag + " image " + std::to_string(index) + ": " + e.what());
            return std::nan("");
        }
    };
    for (std::size_t t = 0; t < cfg.points.size(); ++t)
        r.suite[t] = score(cfg.points[t].name, [&](std::uint64_t s) { return transform(cfg.points[t], marked, s); });
    for (std::size_t x = 0; x < extras.size(); ++x)
        r.extra[x] = score(extras[x].family + "/" + extras[x].name, [&](std::uint64_t s) { return extras[x].apply(marked, s); });
    return r;
}

void accumulate(Cell& c, double v)
{
    if (std::isnan(v)) {
        ++c.failures;
        return;
    }
    // Folded in image order after the parallel stage, so threading cannot change the sums.
    ++c.images;
    c.accuracy += (v - c.accuracy) / c.images;
}

}  // namespace

json BenchConfig::to_json() const
{
    json pts = json::array();
    for (const auto& p : points) pts.push_back({{"name", p.name}, {"param", p.param}});
    return {{"k", k}, {"master_seed", master_seed}, {"points", pts}};
}

std::uint64_t BenchConfig::hash() const { return fnv1a(to_json().dump()); }

const std::vector<std::string>& reserved_methods()
{
    static const std::vector<std::string> r = {"TreeRing", "StableSignature"};
    return r;
}

double BenchReport::average(int m) const
{
    double s = 0.0;
    int n = 0;
    for (const auto& row : rows)
        if (!row.cells.at(m).failed()) {
            s += row.cells[m].accuracy;
            ++n;
        }
    return n ? s / n : std::nan("");
}

const Cell& BenchReport::cell(const std::string& row, const std::string& method) const
{
    for (std::size_t m = 0; m < methods.size(); ++m)
        if (methods[m] == method)
            for (const auto& r : rows)
                if (r.name == row) return r.cells[m];
    throw std::out_of_range("bench report has no cell " + row + "/" + method);
}

std::string BenchReport::to_csv() const
{
    std::ostringstream o;
    o << "transform";
    for (const auto& m : methods) o << ',' << m;
    o << '\n';
    for (const auto& r : rows) {
        o << r.name;
        for (const auto& c : r.cells) o << ',' << cell_text(c);
        o << '\n';
    }
    o << "Average";
    for (std::size_t m = 0; m < methods.size(); ++m) {
        const double a = average(static_cast<int>(m));
        o << ',' << (std::isnan(a) ? std::string("failed") : fixed(a));
    }
    o << '\n';
    return o.str();
}

std::string BenchReport::extras_csv() const
{
    std::ostringstream o;
    o << "family,attack,param";
    for (const auto& m : methods) o << ',' << m;
    o << '\n';
    for (const auto& r : extras) {
        o << r.family << ',' << r.name << ',' << fixed(r.param);
        for (const auto& c : r.cells) o << ',' << cell_text(c);
        o << '\n';
    }
    return o.str();
}

json BenchReport::to_json() const
{
    auto rows_json = [&](const std::vector<BenchRow>& rs) {
        json a = json::array();
        for (const auto& r : rs) {
            json cells = json::object();
            for (std::size_t m = 0; m < methods.size(); ++m)
                cells[methods[m]] = {{"accuracy", r.cells[m].failed() ? json(nullptr) : json(r.cells[m].accuracy)},
                                     {"images", r.cells[m].images},
                                     {"failures", r.cells[m].failures}};
            a.push_back({{"family", r.family}, {"name", r.name}, {"param", r.param}, {"cells", cells}});
        }
        return a;
    };
    json q = json::object(), avg = json::object(), fails = json::object();
    for (std::size_t m = 0; m < methods.size(); ++m) {
        q[methods[m]] = quality[m].to_json();
        const double a = average(static_cast<int>(m));
        avg[methods[m]] = std::isnan(a) ? json(nullptr) : json(a);
        fails[methods[m]] = embed_failures[m];
    }
    return {{"methods", methods},
            {"reserved_methods", reserved_methods()},
            {"rows", rows_json(rows)},
            {"extras", rows_json(extras)},
            {"average", avg},
            {"quality", q},
            {"embed_failures", fails},
            {"errors", errors},
            {"n_images", n_images},
            {"master_seed", master_seed},
            {"config_hash", hex64(config_hash)}};
}

BenchReport run_benchmark(const std::vector<Method>& methods, const std::vector<BenchImage>& images, const BenchConfig& cfg,
                          const std::vector<ExtraAttack>& extras)
{
    if (methods.empty()) throw std::invalid_argument("run_benchmark: no methods");
    if (cfg.k < 1) throw std::invalid_argument("run_benchmark: k must be positive");
    for (const auto& m : methods)
        if (!m.embed || !m.extract) throw std::invalid_argument("run_benchmark: method " + m.name + " lacks embed/extract");

    BenchReport rep;
    rep.n_images = static_cast<int>(images.size());
    rep.master_seed = cfg.master_seed;
    rep.config_hash = cfg.hash();
    for (const auto& m : methods) rep.methods.push_back(m.name);
    for (const auto& p : cfg.points) rep.rows.push_back({"suite", p.name, p.param, std::vector<Cell>(methods.size())});
    for (const auto& x : extras) rep.extras.push_back({x.family, x.name, x.param, std::vector<Cell>(methods.size())});
    rep.quality.assign(methods.size(), Quality{});
    rep.embed_failures.assign(methods.size(), 0);

    const int n = rep.n_images;
    for (std::size_t m = 0; m < methods.size(); ++m) {
        std::vector<ImageResult> results(n);
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < n; ++i) results[i] = evaluate_image(methods[m], images[i], i, cfg, extras);

        int embedded = 0;
        Quality q;
        for (int i = 0; i < n; ++i) {
            const ImageResult& r = results[i];
            rep.errors.insert(rep.errors.end(), r.errors.begin(), r.errors.end());
            if (!r.embedded) ++rep.embed_failures[m];
            else {
                ++embedded;
                q.psnr += r.quality.psnr;
                q.ssim += r.quality.ssim;
                q.linf += r.quality.linf;
                q.mse += r.quality.mse;
            }
            for (std::size_t t = 0; t < r.suite.size(); ++t) accumulate(rep.rows[t].cells[m], r.suite[t]);
            for (std::size_t x = 0; x < r.extra.size(); ++x) accumulate(rep.extras[x].cells[m], r.extra[x]);
        }
        if (embedded) {
            q.psnr /= embedded;
            q.ssim /= embedded;
            q.linf /= embedded;
            q.mse /= embedded;
        }
        rep.quality[m] = q;
    }
    return rep;
}

CsvTable parse_csv(const std::string& text)
{
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string f;
        std::istringstream ls(line);
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (line.back() == ',') fields.emplace_back();
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != t.header.size()) throw std::runtime_error("csv: row width differs from header: " + line);
            t.rows.push_back(std::move(fields));
        }
    }
    if (t.header.empty()) throw std::runtime_error("csv: empty input");
    return t;
}

}  // namespace onrw::eval
