#include "onrw/archive.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace onrw {

namespace {
constexpr char kMagic[8] = {'O', 'N', 'R', 'W', 'A', 'R', 'C', '1'};
}

const Tensor& Archive::get(const std::string& name) const
{
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("archive: missing tensor '" + name + "'");
    return it->second;
}

void Archive::save(const std::string& path) const
{
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("archive: cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!out) throw std::runtime_error("archive: write failed for " + path);
}

Archive Archive::load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("archive: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("archive: bad magic in " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1ULL << 30)) throw std::runtime_error("archive: bad header length in " + path);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("archive: truncated header in " + path);
    const auto header = nlohmann::json::parse(text);

    Archive a;
    a.meta = header.at("meta");
    const auto payload_start = in.tellg();
    for (const auto& entry : header.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        Tensor t(shape);
        const auto offset = entry.at("offset").get<std::uint64_t>();
        in.seekg(payload_start + static_cast<std::streamoff>(offset * sizeof(float)));
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!in) throw std::runtime_error("archive: truncated payload in " + path);
        a.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    return a;
}

}  // namespace onrw
