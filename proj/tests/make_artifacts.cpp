// Trains the toy model, decoder and autoencoder used by the model-dependent
// tests and the acceptance run, caching them in the given directory. A
// cached file is reused only when its recorded recipe matches.

#include "onrw/codec.hpp"
#include "onrw/diffusion.hpp"
#include "onrw/removal.hpp"

#include <filesystem>
#include <iostream>

#include "artifacts.hpp"

using namespace onrw;
using json = nlohmann::json;

namespace {

bool cached(const std::string& path, const json& recipe, const char* kind)
{
    if (!std::filesystem::exists(path)) return false;
    try {
        const Archive a = Archive::load(path);
        if (a.meta.value("kind", "") == kind && a.meta.contains("extra") && a.meta["extra"].value("recipe", json()) == recipe) return true;
    } catch (const std::exception&) {
    }
    std::cout << "stale " << path << ", retraining\n";
    return false;
}

}  // namespace

int main(int argc, char** argv)
{
    if (argc != 2) {
        std::cerr << "usage: make_artifacts <dir>\n";
        return 2;
    }
    const std::filesystem::path dir = argv[1];
    std::filesystem::create_directories(dir);
    const test::ArtifactRecipe r;
    const data::Dataset train = data::make_toy_dataset(r.train_count, r.resolution, r.train_seed);

    const std::string model_path = (dir / "model.onrw").string();
    if (!cached(model_path, r.model_json(), "onrw-diffusion")) {
        diffusion::TrainReport rep;
        const auto m = diffusion::train_toy_model(train, r.model, r.model_train, r.model_seed, &rep);
        m.save(model_path, {{"recipe", r.model_json()}, {"train", rep.to_json()}});
        std::cout << "model: loss " << rep.initial_loss << " -> " << rep.final_loss << " in " << rep.seconds << " s\n";
    }

    const std::string dec_path = (dir / "decoder.onrw").string();
    if (!cached(dec_path, r.decoder_json(), "onrw-decoder")) {
        const data::Dataset held = data::make_toy_dataset(r.heldout_count, r.resolution, r.heldout_seed);
        codec::DecoderTrainReport rep;
        const auto d = codec::train_decoder(train, held, r.decoder, r.decoder_train, r.decoder_seed, &rep);
        d.save(dec_path, {{"recipe", r.decoder_json()}, {"train", rep.to_json()}});
        std::cout << "decoder: held-out clean " << rep.clean_accuracy << ", attacked " << rep.attacked_accuracy << " in "
                  << rep.seconds << " s\n";
    }

    const std::string ae_path = (dir / "autoencoder.onrw").string();
    if (!cached(ae_path, r.autoencoder_json(), "onrw-autoencoder")) {
        const data::Dataset held = data::make_toy_dataset(20, r.resolution, r.heldout_seed);
        eval::AutoencoderTrainReport rep;
        const auto ae = eval::train_autoencoder(train, held, r.autoencoder, r.autoencoder_train, r.autoencoder_seed, &rep);
        ae.save(ae_path, {{"recipe", r.autoencoder_json()}, {"train", rep.to_json()}});
        std::cout << "autoencoder: level PSNR";
        for (double p : rep.level_psnr) std::cout << ' ' << p;
        std::cout << " in " << rep.seconds << " s\n";
    }
    std::cout << "artifacts ready in " << dir.string() << "\n";
    return 0;
}
