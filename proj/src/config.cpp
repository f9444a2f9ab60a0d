#include "onrw/config.hpp"

#include "onrw/hash.hpp"
#include "onrw/rng.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#ifndef ONRW_VERSION
#define ONRW_VERSION "unknown"
#endif

namespace onrw::cli {

using json = nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& lines)
{
    std::string s = "invalid configuration";
    for (const auto& l : lines) s += "\n  " + l;
    return s;
}

// Walks one YAML mapping, reading known keys and reporting everything else.
class Section {
public:
    Section(const YAML::Node& node, std::string path, std::vector<std::string>& errs) : node_(node), path_(std::move(path)), errs_(errs)
    {
        if (node_ && !node_.IsNull() && !node_.IsMap()) {
            errs_.push_back(where() + ": expected a mapping");
            node_ = YAML::Node();
        }
    }
    ~Section()
    {
        if (!node_ || !node_.IsMap()) return;
        for (const auto& kv : node_) {
            const std::string k = kv.first.as<std::string>();
            if (!seen_.count(k)) errs_.push_back(where(k) + ": unknown key");
        }
    }
    Section(const Section&) = delete;
    Section& operator=(const Section&) = delete;

    template <class T>
    void read(const std::string& key, T& out)
    {
        seen_.insert(key);
        if (!node_ || !node_.IsMap() || !node_[key]) return;
        try {
            out = node_[key].as<T>();
        } catch (const YAML::Exception&) {
            errs_.push_back(where(key) + ": wrong type");
        }
    }
    Section child(const std::string& key)
    {
        seen_.insert(key);
        return Section(node_ && node_.IsMap() ? node_[key] : YAML::Node(), where(key), errs_);
    }
    YAML::Node raw(const std::string& key)
    {
        seen_.insert(key);
        return node_ && node_.IsMap() ? node_[key] : YAML::Node();
    }
    std::string where(const std::string& key = {}) const
    {
        if (key.empty()) return path_.empty() ? "<root>" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }
    std::vector<std::string>& errors() { return errs_; }

private:
    YAML::Node node_;
    std::string path_;
    std::vector<std::string>& errs_;
    std::set<std::string> seen_;
};

void read_dataset(Section s, DatasetSpec& d)
{
    s.read("kind", d.kind);
    s.read("count", d.count);
    s.read("seed", d.seed);
    s.read("path", d.path);
    if (d.kind != "toy" && d.kind != "folder") s.errors().push_back(s.where("kind") + ": expected toy or folder");
    if (d.kind == "toy" && d.count < 1) s.errors().push_back(s.where("count") + ": must be positive");
    if (d.kind == "folder" && d.path.empty()) s.errors().push_back(s.where("path") + ": required for folder datasets");
}

// Runs a validate() call and turns its exception into a diagnostic.
template <class Fn>
void check(std::vector<std::string>& errs, const std::string& where, Fn&& fn)
{
    try {
        fn();
    } catch (const std::exception& e) {
        errs.push_back(where + ": " + e.what());
    }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics) : std::runtime_error(join(diagnostics)), diagnostics_(std::move(diagnostics))
{
}

data::Dataset DatasetSpec::load(int resolution) const
{
    if (kind == "toy") return data::make_toy_dataset(count, resolution, seed);
    data::Dataset ds = data::load_folder(path);
    if (ds.resolution != resolution)
        throw std::runtime_error("dataset " + path + " has resolution " + std::to_string(ds.resolution) + ", expected " +
                                 std::to_string(resolution));
    return ds;
}

json DatasetSpec::to_json() const { return {{"kind", kind}, {"count", count}, {"seed", seed}, {"path", path}}; }

json RunConfig::to_json() const
{
    json pool = embed.attack_pool.to_json();
    return {{"seed", seed},
            {"output_dir", output_dir},
            {"paths", {{"model", model_path}, {"decoder", decoder_path}, {"autoencoder", autoencoder_path}}},
            {"dataset", dataset.to_json()},
            {"train_dataset", train_dataset.to_json()},
            {"model", model.to_json()},
            {"model_train", model_train.to_json()},
            {"decoder", decoder.to_json()},
            {"decoder_train", decoder_train.to_json()},
            {"autoencoder", autoencoder.to_json()},
            {"autoencoder_train", autoencoder_train.to_json()},
            {"whitening", {{"enabled", whitening.enabled}, {"count", whitening.count}, {"seed", whitening.seed}}},
            {"embed", embed.to_json()},
            {"bits", bits},
            {"bench",
             {{"methods", bench.methods},
              {"transforms", bench.transforms},
              {"regeneration", bench.regeneration},
              {"autoencoder_levels", bench.autoencoder_levels}}}};
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_json().dump()); }

std::string RunConfig::output_root() const
{
    const char* env = std::getenv("ONRW_OUTPUT_ROOT");
    const std::filesystem::path dir(output_dir);
    if (env && *env && dir.is_relative()) return (std::filesystem::path(env) / dir).string();
    return dir.string();
}

std::vector<eval::TransformPoint> RunConfig::transform_points() const
{
    if (bench.transforms.empty()) return eval::suite_points();
    std::vector<eval::TransformPoint> pts;
    for (const auto& n : bench.transforms) pts.push_back(eval::find_point(n));
    return pts;
}

RunConfig parse_config(const std::string& yaml_text)
{
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError({std::string("malformed YAML: ") + e.what()});
    }
    std::vector<std::string> errs;
    RunConfig c;
    {
        Section s(root, "", errs);
        s.read("seed", c.seed);
        s.read("output_dir", c.output_dir);
        s.read("bits", c.bits);
        {
            Section p = s.child("paths");
            p.read("model", c.model_path);
            p.read("decoder", c.decoder_path);
            p.read("autoencoder", c.autoencoder_path);
        }
        read_dataset(s.child("dataset"), c.dataset);
        read_dataset(s.child("train_dataset"), c.train_dataset);
        {
            Section m = s.child("model");
            m.read("resolution", c.model.resolution);
            m.read("patch", c.model.patch);
            m.read("ch1", c.model.ch1);
            m.read("ch2", c.model.ch2);
            m.read("groups", c.model.groups);
            m.read("attn_dim", c.model.attn_dim);
            m.read("token_dim", c.model.token_dim);
            m.read("tokens_per_class", c.model.tokens_per_class);
            m.read("time_dim", c.model.time_dim);
            m.read("embed_dim", c.model.embed_dim);
            m.read("num_train_steps", c.model.num_train_steps);
            m.read("beta_start", c.model.beta_start);
            m.read("beta_end", c.model.beta_end);
            m.read("ddim_steps", c.model.ddim_steps);
        }
        {
            Section t = s.child("model_train");
            t.read("steps", c.model_train.steps);
            t.read("batch", c.model_train.batch);
            t.read("lr", c.model_train.lr);
            t.read("cfg_dropout", c.model_train.cfg_dropout);
            t.read("grad_clip", c.model_train.grad_clip);
            t.read("log_every", c.model_train.log_every);
        }
        {
            Section d = s.child("decoder");
            d.read("width", c.decoder.width);
            d.read("groups", c.decoder.groups);
        }
        {
            Section t = s.child("decoder_train");
            t.read("steps", c.decoder_train.steps);
            t.read("batch", c.decoder_train.batch);
            t.read("lr", c.decoder_train.lr);
            t.read("image_weight", c.decoder_train.image_weight);
            t.read("image_weight_ramp", c.decoder_train.image_weight_ramp);
            t.read("grad_clip", c.decoder_train.grad_clip);
            t.read("use_attacks", c.decoder_train.use_attacks);
            t.read("clean_warmup", c.decoder_train.clean_warmup);
            t.read("log_every", c.decoder_train.log_every);
        }
        {
            Section a = s.child("autoencoder");
            a.read("width", c.autoencoder.width);
            a.read("levels", c.autoencoder.levels);
        }
        {
            Section t = s.child("autoencoder_train");
            t.read("steps", c.autoencoder_train.steps);
            t.read("batch", c.autoencoder_train.batch);
            t.read("lr", c.autoencoder_train.lr);
            t.read("log_every", c.autoencoder_train.log_every);
        }
        {
            Section w = s.child("whitening");
            w.read("enabled", c.whitening.enabled);
            w.read("count", c.whitening.count);
            w.read("seed", c.whitening.seed);
        }
        {
            Section e = s.child("embed");
            e.read("alpha", c.embed.alpha);
            e.read("beta", c.embed.beta);
            e.read("gamma", c.embed.gamma);
            e.read("iterations", c.embed.iterations);
            e.read("lr", c.embed.lr);
            e.read("guidance", c.embed.guidance);
            std::string mode = embed::mask_mode_name(c.embed.mask_mode), up = embed::upsampling_name(c.embed.upsampling);
            e.read("mask_mode", mode);
            e.read("upsampling", up);
            check(errs, e.where("mask_mode"), [&] { c.embed.mask_mode = embed::parse_mask_mode(mode); });
            check(errs, e.where("upsampling"), [&] { c.embed.upsampling = embed::parse_upsampling(up); });
            Section n = e.child("null_text");
            n.read("inner_iters", c.embed.null_text.inner_iters);
            n.read("lr", c.embed.null_text.lr);
            n.read("max_halvings", c.embed.null_text.max_halvings);
            n.read("early_stop", c.embed.null_text.early_stop);
        }
        if (YAML::Node pool = s.raw("attack_pool"); pool && !pool.IsNull()) {
            if (!pool.IsSequence()) errs.push_back("attack_pool: expected a list");
            else {
                attack::AttackPool p;
                for (std::size_t i = 0; i < pool.size(); ++i) {
                    Section a(pool[i], "attack_pool[" + std::to_string(i) + "]", errs);
                    std::string kind = "identity";
                    attack::AttackTemplate t;
                    double weight = 1.0;
                    a.read("kind", kind);
                    a.read("lo", t.lo);
                    a.read("hi", t.hi);
                    a.read("weight", weight);
                    check(errs, a.where("kind"), [&] { t.kind = attack::parse_kind(kind); });
                    p.specs.push_back(t);
                    p.weights.push_back(weight);
                }
                check(errs, "attack_pool", [&] { p.validate(); });
                c.embed.attack_pool = p;
            }
        }
        {
            Section b = s.child("bench");
            b.read("methods", c.bench.methods);
            b.read("transforms", c.bench.transforms);
            b.read("regeneration", c.bench.regeneration);
            b.read("autoencoder_levels", c.bench.autoencoder_levels);
        }
    }

    c.decoder.k = c.bits;
    c.decoder.resolution = c.model.resolution;
    c.autoencoder.resolution = c.model.resolution;
    if (c.bits < 1) errs.push_back("bits: must be positive");
    check(errs, "model", [&] { c.model.validate(); });
    check(errs, "decoder", [&] { c.decoder.validate(); });
    check(errs, "autoencoder", [&] { c.autoencoder.validate(); });
    check(errs, "embed", [&] {
        embed::EmbedConfig probe = c.embed;
        probe.message = codec::sample_message(std::max(1, c.bits), 0);
        probe.validate();
    });
    if (c.whitening.count < 2) errs.push_back("whitening.count: needs at least two images");
    for (const auto& t : c.bench.transforms) check(errs, "bench.transforms", [&] { eval::find_point(t); });
    for (const auto& m : c.bench.methods)
        if (m != "ONRW" && m != "DwtDct") errs.push_back("bench.methods: unknown method " + m);
    for (double t : c.bench.regeneration)
        if (!(t > 0.0 && t < 1.0)) errs.push_back("bench.regeneration: strengths must lie in (0,1)");
    if (c.output_dir.empty()) errs.push_back("output_dir: must not be empty");
    if (!errs.empty()) throw ConfigError(std::move(errs));
    return c;
}

RunConfig load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError({"cannot read config file " + path});
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

codec::BitMessage image_message(const RunConfig& cfg, int index)
{
    return codec::sample_message(cfg.bits, derive_seed(cfg.seed, "image-message", static_cast<std::uint64_t>(index)));
}

std::string version_string() { return ONRW_VERSION; }

RunManifest::RunManifest(std::string command, const RunConfig* cfg) : command_(std::move(command))
{
    if (cfg) {
        config_ = cfg->to_json();
        config_hash_ = cfg->hash();
        seed_ = cfg->seed;
    }
}

void RunManifest::add_checkpoint(const std::string& role, const std::string& path)
{
    checkpoints_[role] = {{"path", path}, {"digest", hex64(file_digest(path))}};
}

std::string RunManifest::write(const std::string& dir, bool ok, const std::string& error) const
{
    std::filesystem::create_directories(dir);
    json missing = json::array();
    for (const auto& p : outputs_)
        if (!std::filesystem::exists(p)) missing.push_back(p);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m = {{"command", command_},
              {"version", version_string()},
              {"status", ok ? "ok" : "failed"},
              {"stage", stage_},
              {"config", config_},
              {"config_hash", hex64(config_hash_)},
              {"seeds", {{"master", seed_}, {"derivation", "mix64(master ^ mix64(fnv1a(tag)) ^ mix64(index + 1))"}}},
              {"checkpoints", checkpoints_},
              {"outputs", outputs_},
              {"missing", missing},
              {"results", results_},
              {"seconds", secs}};
    if (!ok) m["error"] = error;
    const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
    std::ofstream(path) << m.dump(2) << '\n';
    return path;
}

}  // namespace onrw::cli
