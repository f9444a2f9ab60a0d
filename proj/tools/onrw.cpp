// onrw: command-line entry points for training, embedding, extraction,
// attacks and benchmarking. Exit status 2 means the configuration or the
// arguments were rejected before any work started; 1 means a stage failed
// (the manifest names it).

#include "onrw/dwtdct.hpp"
#include "onrw/hash.hpp"
#include "onrw/image.hpp"
#include "onrw/inversion.hpp"
#include "onrw/pipeline.hpp"
#include "onrw/plot.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace onrw;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text)
{
    fs::create_directories(fs::path(path).parent_path().empty() ? fs::path(".") : fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Options {
    std::string config;
    std::string output_dir;
    std::string image;
    int index = 0;
    int label = -1;
    std::string message;
    std::string transform;
    double regen = 0.0;
    int ae_level = 0;
    std::string csv;
    std::string extras;
    std::string trajectory;
    int count = -1;
};

cli::RunConfig load(const Options& opt)
{
    cli::RunConfig cfg = opt.config.empty() ? cli::parse_config("") : cli::load_config(opt.config);
    if (!opt.output_dir.empty()) cfg.output_dir = opt.output_dir;
    return cfg;
}

// Input image: an explicit PNG (label required for conditioning) or one entry of the configured dataset.
struct Input {
    Tensor image;
    int label = 0;
    int index = 0;
};

Input input_image(const cli::RunConfig& cfg, const Options& opt, bool need_label)
{
    Input in;
    in.index = opt.index;
    if (!opt.image.empty()) {
        in.image = image::load_png(opt.image);
        if (need_label && opt.label < 0) throw std::invalid_argument("--label is required with --image");
        in.label = std::max(opt.label, 0);
        return in;
    }
    const data::Dataset ds = cfg.dataset.load(cfg.model.resolution);
    if (opt.index < 0 || opt.index >= static_cast<int>(ds.size())) throw std::out_of_range("--index outside the dataset");
    in.image = ds.images[opt.index];
    in.label = opt.label >= 0 ? opt.label : ds.labels[opt.index];
    return in;
}

codec::Decoder load_decoder(const cli::RunConfig& cfg, cli::RunManifest& man)
{
    const std::string path = cli::resolve(cfg, cfg.decoder_path);
    codec::Decoder dec = codec::Decoder::load(path);
    man.add_checkpoint("decoder", path);
    cli::apply_whitening(cfg, dec);
    return dec;
}

diffusion::DiffusionModel load_model(const cli::RunConfig& cfg, cli::RunManifest& man)
{
    const std::string path = cli::resolve(cfg, cfg.model_path);
    diffusion::DiffusionModel m = diffusion::DiffusionModel::load(path);
    man.add_checkpoint("model", path);
    return m;
}

void cmd_train_model(const cli::RunConfig& cfg, const Options&, cli::RunManifest& man)
{
    man.stage("dataset");
    const data::Dataset train = cfg.train_dataset.load(cfg.model.resolution);
    man.stage("train");
    diffusion::TrainReport rep;
    const diffusion::DiffusionModel model = diffusion::train_toy_model(train, cfg.model, cfg.model_train, cfg.seed, &rep);
    man.stage("save");
    const std::string path = cli::resolve(cfg, cfg.model_path);
    fs::create_directories(fs::path(path).parent_path());
    model.save(path, {{"train", rep.to_json()}});
    man.add_output(path);
    man.add_checkpoint("model", path);
    man.results() = rep.to_json();
    std::cout << "model saved to " << path << " (final loss " << rep.final_loss << ")\n";
}

void cmd_train_decoder(const cli::RunConfig& cfg, const Options&, cli::RunManifest& man)
{
    man.stage("dataset");
    const data::Dataset train = cfg.train_dataset.load(cfg.decoder.resolution);
    const data::Dataset held = cfg.dataset.load(cfg.decoder.resolution);
    man.stage("train");
    codec::DecoderTrainConfig tc = cfg.decoder_train;
    tc.pool = cfg.embed.attack_pool;
    codec::DecoderTrainReport rep;
    const codec::Decoder dec = codec::train_decoder(train, held, cfg.decoder, tc, cfg.seed, &rep);
    man.stage("save");
    const std::string path = cli::resolve(cfg, cfg.decoder_path);
    fs::create_directories(fs::path(path).parent_path());
    dec.save(path, {{"train", rep.to_json()}});
    man.add_output(path);
    man.add_checkpoint("decoder", path);
    man.results() = rep.to_json();
    std::cout << "decoder saved to " << path << " (held-out clean " << rep.clean_accuracy << ", attacked "
              << rep.attacked_accuracy << ")\n";
}

void cmd_train_autoencoder(const cli::RunConfig& cfg, const Options&, cli::RunManifest& man)
{
    man.stage("dataset");
    const data::Dataset train = cfg.train_dataset.load(cfg.autoencoder.resolution);
    const data::Dataset held = cfg.dataset.load(cfg.autoencoder.resolution);
    man.stage("train");
    eval::AutoencoderTrainReport rep;
    const eval::Autoencoder ae = eval::train_autoencoder(train, held, cfg.autoencoder, cfg.autoencoder_train, cfg.seed, &rep);
    man.stage("save");
    const std::string path = cli::resolve(cfg, cfg.autoencoder_path);
    fs::create_directories(fs::path(path).parent_path());
    ae.save(path, {{"train", rep.to_json()}});
    man.add_output(path);
    man.add_checkpoint("autoencoder", path);
    man.results() = rep.to_json();
    std::cout << "autoencoder saved to " << path << "\n";
}

void cmd_invert(const cli::RunConfig& cfg, const Options& opt, cli::RunManifest& man)
{
    const diffusion::DiffusionModel model = load_model(cfg, man);
    const diffusion::Sampler sampler(model);
    man.stage("input");
    const Input in = input_image(cfg, opt, true);
    const auto cond = model.condition(in.label);
    man.stage("invert");
    const auto pivot = inversion::ddim_invert(sampler, in.image, cond, 1.0f);
    diffusion::LatentTrajectory plain = pivot;
    plain.guidance = cfg.embed.guidance;
    plain.cond = cond;
    const Tensor plain_rec = image::quantize8(inversion::reconstruct(sampler, plain));
    man.stage("null-text");
    inversion::NullTextReport ntr;
    const auto traj = inversion::null_text_optimize(sampler, pivot, cond, cfg.embed.guidance, cfg.embed.null_text, &ntr);
    const Tensor rec = image::quantize8(inversion::reconstruct(sampler, traj));
    man.stage("save");
    const std::string dir = cfg.output_root();
    const std::string tpath = (fs::path(dir) / ("trajectory_" + std::to_string(in.index) + ".onrw")).string();
    const std::string rpath = (fs::path(dir) / ("reconstruction_" + std::to_string(in.index) + ".png")).string();
    fs::create_directories(dir);
    inversion::save_trajectory(tpath, traj, cfg.hash());
    image::save_png(rpath, rec);
    man.add_output(tpath);
    man.add_output(rpath);
    const double p0 = eval::quality_metrics(plain_rec, in.image).psnr, p1 = eval::quality_metrics(rec, in.image).psnr;
    man.results() = {{"ddim_psnr", p0}, {"null_text_psnr", p1}, {"initial_loss", ntr.initial_loss}, {"final_loss", ntr.final_loss}};
    std::cout << "reconstruction PSNR: plain " << p0 << " dB, null-text " << p1 << " dB\n";
}

void cmd_embed(const cli::RunConfig& cfg, const Options& opt, cli::RunManifest& man)
{
    const diffusion::DiffusionModel model = load_model(cfg, man);
    const codec::Decoder dec = load_decoder(cfg, man);
    const diffusion::Sampler sampler(model);
    if (dec.config().resolution != model.config().resolution) throw std::runtime_error("decoder and model resolutions differ");
    man.stage("input");
    std::vector<Input> inputs;
    if (!opt.image.empty() || opt.count < 0) inputs.push_back(input_image(cfg, opt, true));
    else {
        const data::Dataset ds = cfg.dataset.load(cfg.model.resolution);
        const int n = opt.count == 0 ? static_cast<int>(ds.size()) : std::min<int>(opt.count, ds.size());
        for (int i = 0; i < n; ++i) inputs.push_back({ds.images[i], ds.labels[i], i});
    }
    const std::string dir = cfg.output_root();
    fs::create_directories(dir);
    json per = json::array();
    for (const Input& in : inputs) {
        man.stage("embed image " + std::to_string(in.index));
        const codec::BitMessage msg = opt.message.empty() ? cli::image_message(cfg, in.index) : codec::BitMessage::parse(opt.message);
        if (msg.size() != dec.config().k) throw std::invalid_argument("message length differs from the decoder's k");
        const embed::EmbedConfig ec = cli::embed_config(cfg, msg, derive_seed(cfg.seed, "embed", in.index));
        const embed::EmbedResult r = embed::embed(sampler, in.image, model.condition(in.label), dec, ec);
        const std::string path = (fs::path(dir) / ("watermarked_" + std::to_string(in.index) + ".png")).string();
        image::save_png(path, r.watermarked);
        man.add_output(path);
        json j = r.to_json();
        j["index"] = in.index;
        j["message"] = msg.str();
        j["output"] = path;
        j["quality"] = eval::quality_metrics(r.watermarked, in.image).to_json();
        per.push_back(j);
        std::cout << path << ": clean bit accuracy " << r.clean_bit_accuracy << ", PSNR " << j["quality"]["psnr"].get<double>()
                  << (r.failed ? " (FAILED)" : "") << "\n";
    }
    man.results() = {{"images", per}};
}

void cmd_extract(const cli::RunConfig& cfg, const Options& opt, cli::RunManifest& man)
{
    const codec::Decoder dec = load_decoder(cfg, man);
    if (opt.image.empty()) throw std::invalid_argument("--image is required");
    man.stage("decode");
    const Tensor img = image::load_png(opt.image);
    const codec::Decoded d = dec.decode(img);
    json r = {{"bits", d.bits[0].str()}};
    std::cout << d.bits[0].str() << "\n";
    if (!opt.message.empty()) {
        const double acc = codec::bit_accuracy(d.bits[0], codec::BitMessage::parse(opt.message));
        r["bit_accuracy"] = acc;
        std::cout << "bit accuracy " << acc << "\n";
    }
    man.results() = r;
}

void cmd_attack(const cli::RunConfig& cfg, const Options& opt, cli::RunManifest& man)
{
    man.stage("input");
    if (opt.image.empty()) throw std::invalid_argument("--image is required");
    const int chosen = !opt.transform.empty() + (opt.regen > 0.0) + (opt.ae_level > 0);
    if (chosen != 1) throw std::invalid_argument("choose exactly one of --transform, --regen, --ae-level");
    const Tensor img = image::load_png(opt.image);
    const std::uint64_t seed = derive_seed(cfg.seed, "cli-attack");
    Tensor out;
    std::string tag;
    man.stage("attack");
    if (!opt.transform.empty()) {
        out = eval::transform(eval::find_point(opt.transform), img, seed);
        tag = opt.transform;
    } else if (opt.regen > 0.0) {
        const diffusion::DiffusionModel model = load_model(cfg, man);
        out = eval::regeneration_attack(diffusion::Sampler(model), img, opt.regen, seed);
        tag = "regen";
    } else {
        const std::string path = cli::resolve(cfg, cfg.autoencoder_path);
        const eval::Autoencoder ae = eval::Autoencoder::load(path);
        man.add_checkpoint("autoencoder", path);
        out = eval::autoencoder_attack(ae, img, opt.ae_level);
        tag = "ae" + std::to_string(opt.ae_level);
    }
    const std::string dir = cfg.output_root();
    fs::create_directories(dir);
    const std::string path = (fs::path(dir) / ("attacked_" + tag + ".png")).string();
    image::save_png(path, out);
    man.add_output(path);
    man.results() = {{"quality", eval::quality_metrics(out, img).to_json()}};
    std::cout << path << "\n";
}

void cmd_bench(const cli::RunConfig& cfg, const Options& opt, cli::RunManifest& man)
{
    man.stage("dataset");
    const data::Dataset ds = cfg.dataset.load(cfg.model.resolution);
    std::vector<eval::BenchImage> images;
    const int n = opt.count > 0 ? std::min<int>(opt.count, ds.size()) : static_cast<int>(ds.size());
    for (int i = 0; i < n; ++i) images.push_back({ds.images[i], ds.labels[i]});

    man.stage("load");
    const diffusion::DiffusionModel model = load_model(cfg, man);
    const diffusion::Sampler sampler(model);
    std::optional<codec::Decoder> dec;
    std::optional<eval::Autoencoder> ae;
    std::vector<eval::Method> methods;
    for (const auto& name : cfg.bench.methods) {
        if (name == "ONRW") {
            dec = load_decoder(cfg, man);
            methods.push_back(cli::onrw_method(sampler, *dec, cfg));
        } else {
            methods.push_back(cli::dwtdct_method());
        }
    }
    if (cfg.bench.autoencoder_levels) {
        const std::string path = cli::resolve(cfg, cfg.autoencoder_path);
        ae = eval::Autoencoder::load(path);
        man.add_checkpoint("autoencoder", path);
    }
    eval::BenchConfig bc;
    bc.k = cfg.bits;
    bc.master_seed = cfg.seed;
    bc.points = cfg.transform_points();

    man.stage("bench");
    const eval::BenchReport rep = eval::run_benchmark(methods, images, bc, cli::removal_attacks(sampler, cfg.bench.regeneration, ae ? &*ae : nullptr));
    man.stage("write");
    const std::string dir = cfg.output_root();
    const std::string csv = (fs::path(dir) / "bench.csv").string();
    const std::string extras = (fs::path(dir) / "bench_extras.csv").string();
    const std::string js = (fs::path(dir) / "bench.json").string();
    write_text(csv, rep.to_csv());
    write_text(extras, rep.extras_csv());
    json j = rep.to_json();
    j["config_hash_run"] = hex64(cfg.hash());
    write_text(js, j.dump(2) + "\n");
    for (const auto& p : {csv, extras, js}) man.add_output(p);
    man.results() = {{"average", j["average"]}, {"embed_failures", j["embed_failures"]}, {"errors", j["errors"].size()}};
    std::cout << rep.to_csv();
}

void cmd_report(const cli::RunConfig& cfg, const Options& opt, cli::RunManifest& man)
{
    const std::string dir = cfg.output_root();
    const std::string csv = opt.csv.empty() ? (fs::path(dir) / "bench.csv").string() : opt.csv;
    std::string extras = opt.extras;
    if (extras.empty()) {
        const fs::path guess = fs::path(csv).parent_path() / "bench_extras.csv";
        if (fs::exists(guess)) extras = guess.string();
    }
    man.stage("parse");
    const eval::CsvTable suite = eval::parse_csv(read_text(csv));
    std::optional<eval::CsvTable> ex;
    if (!extras.empty()) ex = eval::parse_csv(read_text(extras));
    man.stage("render");
    const std::string out = (fs::path(dir) / "plots").string();
    for (const auto& p : eval::render_report(suite, ex ? &*ex : nullptr, out)) {
        man.add_output(p);
        std::cout << p << "\n";
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Optimization-based null-text watermarking toolkit"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("-c,--config", opt.config, "YAML run configuration (defaults when omitted)");
    app.add_option("-o,--output-dir", opt.output_dir, "Override output_dir; relative paths go under $ONRW_OUTPUT_ROOT");

    using Handler = void (*)(const cli::RunConfig&, const Options&, cli::RunManifest&);
    std::vector<std::pair<CLI::App*, Handler>> commands;
    auto add = [&](const char* name, const char* help, Handler h) {
        CLI::App* sub = app.add_subcommand(name, help);
        commands.emplace_back(sub, h);
        return sub;
    };
    add("train-model", "Train the toy diffusion model", cmd_train_model);
    add("train-decoder", "Train the watermark decoder", cmd_train_decoder);
    add("train-autoencoder", "Train the removal-attack autoencoder", cmd_train_autoencoder);
    auto* inv = add("invert", "DDIM inversion plus null-text optimization of one image", cmd_invert);
    auto* emb = add("embed", "Embed a message into one image or the dataset", cmd_embed);
    auto* ext = add("extract", "Decode the message from an image", cmd_extract);
    auto* att = add("attack", "Apply one transform or removal attack to an image", cmd_attack);
    auto* bench = add("bench", "Run the robustness benchmark", cmd_bench);
    auto* rep = add("report", "Render plots from benchmark CSVs", cmd_report);
    for (CLI::App* s : {inv, emb}) {
        s->add_option("--image", opt.image, "Input PNG");
        s->add_option("--index", opt.index, "Dataset index when no image is given");
        s->add_option("--label", opt.label, "Class label for conditioning");
    }
    emb->add_option("--message", opt.message, "Bit string; default is derived from the seed");
    emb->add_option("--count", opt.count, "Embed the first N dataset images (0 = all)");
    ext->add_option("--image", opt.image, "Input PNG")->required();
    ext->add_option("--message", opt.message, "Expected bits, to report accuracy");
    att->add_option("--image", opt.image, "Input PNG")->required();
    att->add_option("--transform", opt.transform, "Transform label, e.g. JPEG_50");
    att->add_option("--regen", opt.regen, "Regeneration strength in (0,1)");
    att->add_option("--ae-level", opt.ae_level, "Autoencoder bottleneck level");
    bench->add_option("--count", opt.count, "Use only the first N dataset images");
    rep->add_option("--csv", opt.csv, "Suite CSV (default: <output>/bench.csv)");
    rep->add_option("--extras", opt.extras, "Extra-attack CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    cli::RunConfig cfg;
    try {
        cfg = load(opt);
    } catch (const cli::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    for (const auto& [sub, handler] : commands) {
        if (!sub->parsed()) continue;
        cli::RunManifest man(sub->get_name(), &cfg);
        const std::string dir = cfg.output_root();
        try {
            handler(cfg, opt, man);
            man.write(dir, true);
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            try {
                std::cerr << "manifest: " << man.write(dir, false, e.what()) << "\n";
            } catch (const std::exception& w) {
                std::cerr << "could not write manifest: " << w.what() << "\n";
            }
            return 1;
        }
    }
    return 2;
}
