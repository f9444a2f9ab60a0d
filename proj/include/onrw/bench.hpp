#pragma once

// Robustness benchmark: every method embeds the same per-image message, each
// marked image passes through every transform point, and the report keeps
// the mean bit accuracy per (transform, method) cell.

#include "onrw/codec.hpp"
#include "onrw/metrics.hpp"
#include "onrw/transforms.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace onrw::eval {

struct BenchImage {
    Tensor image;  // [1,3,H,W], 8-bit quantized
    int label = 0;
};

struct Method {
    std::string name;
    /// Returns the marked image. `seed` is the per-(method, image) seed.
    std::function<Tensor(const BenchImage&, const codec::BitMessage&, std::uint64_t seed)> embed;
    std::function<codec::BitMessage(const Tensor&, int k)> extract;
};

/// A removal attack outside the fixed transform table, grouped by family for
/// the trend plots (regeneration strength, autoencoder level).
struct ExtraAttack {
    std::string family;
    std::string name;
    double param = 0.0;
    std::function<Tensor(const Tensor&, std::uint64_t seed)> apply;
};

struct BenchConfig {
    int k = 16;
    std::uint64_t master_seed = 0;
    std::vector<TransformPoint> points = suite_points();

    nlohmann::json to_json() const;
    std::uint64_t hash() const;
};

struct Cell {
    double accuracy = 0.0;  // mean over the images that did not fail
    int images = 0;
    int failures = 0;

    bool failed() const { return images == 0; }
};

struct BenchRow {
    std::string family;  // "suite" or the extra attack family
    std::string name;
    double param = 0.0;
    std::vector<Cell> cells;  // one per method
};

struct BenchReport {
    std::vector<std::string> methods;
    std::vector<BenchRow> rows;    // transform suite, report order
    std::vector<BenchRow> extras;  // extra attacks
    std::vector<Quality> quality;  // per method, mean over embedded images
    std::vector<int> embed_failures;
    std::vector<std::string> errors;
    int n_images = 0;
    std::uint64_t master_seed = 0;
    std::uint64_t config_hash = 0;

    /// Mean over the non-failed cells of the transform suite for method m.
    double average(int m) const;
    /// Cell of the named suite row; throws if absent.
    const Cell& cell(const std::string& row, const std::string& method) const;

    /// transform,<method...> with an Average row; fixed 12-decimal cells, "failed" for empty cells.
    std::string to_csv() const;
    /// family,attack,param,<method...>
    std::string extras_csv() const;
    nlohmann::json to_json() const;
};

/// Columns reserved in the manifest for externally produced numbers.
const std::vector<std::string>& reserved_methods();

/// Per-cell seeds are derived from (master seed, method, transform, image
/// index), so evaluation order and threading leave the results unchanged.
/// Exceptions from a method are recorded as failures and the run continues.
BenchReport run_benchmark(const std::vector<Method>& methods, const std::vector<BenchImage>& images, const BenchConfig& cfg,
                          const std::vector<ExtraAttack>& extras = {});

/// Parsed view of a to_csv / extras_csv file.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
CsvTable parse_csv(const std::string& text);

}  // namespace onrw::eval
