#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "onrw/bench.hpp"
#include "onrw/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace onrw;
using namespace onrw::cli;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> diagnostics_of(const std::string& yaml)
{
    try {
        parse_config(yaml);
    } catch (const ConfigError& e) {
        return e.diagnostics();
    }
    return {};
}

bool mentions(const std::vector<std::string>& diags, const std::string& needle)
{
    for (const auto& d : diags)
        if (d.find(needle) != std::string::npos) return true;
    return false;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small enough that every subcommand finishes in seconds.
const char* kTinyConfig = R"(
seed: 3
bits: 8
dataset: {kind: toy, count: 2, seed: 5}
train_dataset: {kind: toy, count: 16, seed: 6}
model: {ch1: 16, ch2: 16, attn_dim: 16, token_dim: 16, time_dim: 16, embed_dim: 32, ddim_steps: 4}
model_train: {steps: 10, batch: 4, log_every: 5}
decoder: {width: 8, groups: 4}
decoder_train: {steps: 10, batch: 4, clean_warmup: 2, log_every: 5}
autoencoder: {width: 8}
autoencoder_train: {steps: 5, batch: 4, log_every: 5}
whitening: {count: 4}
embed:
  iterations: 2
  null_text: {inner_iters: 1}
bench:
  transforms: [None, JPEG_50]
  regeneration: [0.3]
)";

struct Cli {
    fs::path dir;
    fs::path config;

    explicit Cli(const std::string& name) : dir(fs::temp_directory_path() / name)
    {
        fs::remove_all(dir);
        fs::create_directories(dir);
        config = dir / "run.yaml";
        std::ofstream(config) << kTinyConfig << "output_dir: " << (dir / "out").string() << "\n";
    }
    ~Cli() { fs::remove_all(dir); }

    int run(const std::string& args, const fs::path* cfg = nullptr) const
    {
        const std::string cmd = std::string(ONRW_CLI) + " -c " + (cfg ? *cfg : config).string() + " " + args + " > " +
                                (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }
    fs::path out(const std::string& f) const { return dir / "out" / f; }
    nlohmann::json manifest() const { return nlohmann::json::parse(slurp(out("manifest.json"))); }
};

}  // namespace

TEST_CASE("an empty config yields the documented defaults")
{
    const RunConfig c = parse_config("");
    CHECK(c.embed.alpha == 100.0f);
    CHECK(c.embed.beta == 80.0f);
    CHECK(c.embed.gamma == 20.0f);
    CHECK(c.embed.lr == doctest::Approx(1e-2f));
    CHECK(c.embed.iterations == 120);
    CHECK(c.embed.guidance == 4.5f);
    CHECK(c.embed.mask_mode == embed::MaskMode::soft);
    CHECK(c.embed.upsampling == embed::Upsampling::bilinear);
    CHECK(c.bits == 48);
    CHECK(c.decoder.k == 48);
    CHECK(c.model.resolution == 32);
    CHECK(c.decoder.resolution == 32);
    CHECK(c.whitening.enabled);
    CHECK(c.transform_points().size() == eval::suite_points().size());
    CHECK(c.hash() == parse_config("{}").hash());
}

TEST_CASE("explicit values are honored, including zero weights")
{
    const RunConfig c = parse_config("embed: {alpha: 0, beta: 0, mask_mode: hard, upsampling: nearest}\nbits: 16\n"
                                     "model: {resolution: 64}\nbench: {transforms: [JPEG_50]}\n");
    CHECK(c.embed.alpha == 0.0f);
    CHECK(c.embed.beta == 0.0f);
    CHECK(c.embed.gamma == 20.0f);
    CHECK(c.embed.mask_mode == embed::MaskMode::hard);
    CHECK(c.embed.upsampling == embed::Upsampling::nearest);
    CHECK(c.decoder.k == 16);
    CHECK(c.decoder.resolution == 64);
    CHECK(c.autoencoder.resolution == 64);
    REQUIRE(c.transform_points().size() == 1);
    CHECK(c.transform_points()[0].name == "JPEG_50");
    CHECK(c.hash() != parse_config("").hash());
}

TEST_CASE("attack pools parse and validate")
{
    const RunConfig c = parse_config("attack_pool:\n  - {kind: jpeg, lo: 50, hi: 90, weight: 0.75}\n  - {kind: identity, weight: 0.25}\n");
    REQUIRE(c.embed.attack_pool.specs.size() == 2);
    CHECK(c.embed.attack_pool.weights[0] == 0.75);
    CHECK(mentions(diagnostics_of("attack_pool: {kind: jpeg}"), "expected a list"));
    CHECK(mentions(diagnostics_of("attack_pool: [{kind: sharpen}]"), "attack_pool[0]"));
    CHECK(mentions(diagnostics_of("attack_pool: [{kind: jpeg, quality: 3}]"), "quality"));
}

TEST_CASE("unknown keys, wrong types and bad values are all reported")
{
    const auto d = diagnostics_of("sed: 1\nembed: {alhpa: 3, iterations: many}\nbits: 0\nbench: {methods: [Magic], regeneration: [1.5]}\n");
    CHECK(mentions(d, "sed"));
    CHECK(mentions(d, "embed.alhpa"));
    CHECK(mentions(d, "embed.iterations"));
    CHECK(mentions(d, "bits"));
    CHECK(mentions(d, "Magic"));
    CHECK(mentions(d, "regeneration"));
    CHECK(d.size() >= 6);
    CHECK(mentions(diagnostics_of("embed: {mask_mode: fuzzy}"), "mask_mode"));
    CHECK(mentions(diagnostics_of("bench: {transforms: [Blur]}"), "bench.transforms"));
    CHECK(mentions(diagnostics_of("dataset: {kind: folder}"), "path"));
    CHECK(mentions(diagnostics_of("embed: [1, 2"), "malformed YAML"));
    CHECK(mentions(diagnostics_of("embed: {lr: -1}"), "embed"));
    CHECK_THROWS_AS(load_config("/nonexistent/run.yaml"), ConfigError);
}

TEST_CASE("per-image messages are fixed by the master seed")
{
    RunConfig a = parse_config("bits: 32");
    RunConfig b = a;
    CHECK(image_message(a, 0).str() == image_message(b, 0).str());
    CHECK(image_message(a, 0).str() != image_message(a, 1).str());
    CHECK(image_message(a, 3).size() == 32);
    b.seed = 1;
    CHECK(image_message(a, 0).str() != image_message(b, 0).str());
}

TEST_CASE("output root and manifests")
{
    RunConfig c = parse_config("output_dir: rel");
    ::setenv("ONRW_OUTPUT_ROOT", "/tmp/root", 1);
    CHECK(c.output_root() == "/tmp/root/rel");
    c.output_dir = "/abs";
    CHECK(c.output_root() == "/abs");
    ::unsetenv("ONRW_OUTPUT_ROOT");

    const fs::path dir = fs::temp_directory_path() / "onrw_test_manifest";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "present.txt") << "x";
    RunManifest m("unit", &c);
    m.stage("middle");
    m.add_output((dir / "present.txt").string());
    m.add_output((dir / "absent.txt").string());
    m.add_checkpoint("file", (dir / "present.txt").string());
    m.results()["value"] = 1;
    const auto j = nlohmann::json::parse(slurp(m.write(dir.string(), false, "stopped")));
    CHECK(j["command"] == "unit");
    CHECK(j["status"] == "failed");
    CHECK(j["stage"] == "middle");
    CHECK(j["error"] == "stopped");
    CHECK(j["missing"].size() == 1);
    CHECK(j["config_hash"].get<std::string>().size() == 16);
    CHECK(j["checkpoints"]["file"]["digest"].is_string());
    CHECK(j["results"]["value"] == 1);
    CHECK_FALSE(version_string().empty());
    fs::remove_all(dir);
}

TEST_CASE("command line rejects bad configs and arguments without side effects")
{
    Cli cli("onrw_test_cli_reject");
    const fs::path bad = cli.dir / "bad.yaml";
    std::ofstream(bad) << "embed: {alhpa: 1}\noutput_dir: " << (cli.dir / "out").string() << "\n";
    CHECK(cli.run("bench", &bad) == 2);
    CHECK(slurp(cli.dir / "stderr.txt").find("alhpa") != std::string::npos);
    CHECK_FALSE(fs::exists(cli.out("manifest.json")));

    const fs::path broken = cli.dir / "broken.yaml";
    std::ofstream(broken) << "embed: [1, 2\n";
    CHECK(cli.run("bench", &broken) == 2);
    CHECK(cli.run("no-such-command") == 2);
    CHECK(cli.run("extract") == 2);  // --image is required

    CHECK(cli.run("extract --image " + (cli.dir / "missing.png").string()) == 1);
    const auto m = cli.manifest();
    CHECK(m["status"] == "failed");
    CHECK(m["command"] == "extract");
}

TEST_CASE("command line end to end on a tiny configuration")
{
    Cli cli("onrw_test_cli_run");
    REQUIRE(cli.run("train-model") == 0);
    CHECK(fs::exists(cli.out("model.onrw")));
    CHECK(cli.manifest()["status"] == "ok");
    REQUIRE(cli.run("train-decoder") == 0);
    REQUIRE(cli.run("train-autoencoder") == 0);

    REQUIRE(cli.run("invert --index 1") == 0);
    CHECK(fs::exists(cli.out("reconstruction_1.png")));

    REQUIRE(cli.run("embed --index 0 --message 10110010") == 0);
    const fs::path wm = cli.out("watermarked_0.png");
    REQUIRE(fs::exists(wm));
    REQUIRE(cli.run("extract --image " + wm.string() + " --message 10110010") == 0);
    const std::string out = slurp(cli.dir / "stdout.txt");
    CHECK(out.size() >= 8);
    CHECK(out.find("bit accuracy") != std::string::npos);
    CHECK(cli.run("embed --index 0 --message 101") == 1);  // wrong length

    CHECK(cli.run("attack --image " + wm.string() + " --transform JPEG_50") == 0);
    CHECK(cli.run("attack --image " + wm.string() + " --regen 0.3") == 0);
    CHECK(cli.run("attack --image " + wm.string() + " --ae-level 2") == 0);
    CHECK(cli.run("attack --image " + wm.string() + " --transform Blur") == 1);

    REQUIRE(cli.run("bench") == 0);
    const std::string first = slurp(cli.out("bench.csv"));
    const std::string first_extras = slurp(cli.out("bench_extras.csv"));
    REQUIRE(cli.run("bench") == 0);
    CHECK(slurp(cli.out("bench.csv")) == first);
    CHECK(slurp(cli.out("bench_extras.csv")) == first_extras);
    const eval::CsvTable t = eval::parse_csv(first);
    CHECK(t.header == std::vector<std::string>{"transform", "ONRW", "DwtDct"});
    CHECK(t.rows.size() == 3);

    REQUIRE(cli.run("report") == 0);
    CHECK(fs::exists(cli.out("plots/suite.png")));
    CHECK(fs::exists(cli.out("plots/regeneration.png")));
    CHECK(fs::exists(cli.out("plots/autoencoder.png")));
}
