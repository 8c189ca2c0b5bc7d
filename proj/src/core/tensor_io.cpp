#include "mlmt/core/tensor_io.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

namespace mlmt::core {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'M', 'T', 'W', 'T', 'S', '1'};

std::int32_t dtype_code(torch::ScalarType t)
{
    switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    default: throw std::runtime_error("unsupported tensor dtype for serialisation");
    }
}

torch::ScalarType dtype_of(std::int32_t code)
{
    switch (code) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    default: throw std::runtime_error("corrupt weights file: unknown dtype");
    }
}

template <class T>
void put(std::ostream& out, T v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in)
{
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("truncated weights file");
    return v;
}

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes)
{
    if (prefixes.empty()) return true;
    for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) return true;
    return false;
}

}  // namespace

void save_named_tensors(const NamedTensors& tensors, const std::filesystem::path& path)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, tensor] : tensors) {
        const auto t = tensor.detach().cpu().contiguous();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::int32_t>(out, dtype_code(t.scalar_type()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) put<std::int64_t>(out, d);
        out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

NamedTensors load_named_tensors(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + sizeof magic, kMagic))
        throw std::runtime_error(path.string() + " is not a weights file");
    const auto count = get<std::uint64_t>(in);
    NamedTensors out;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name(get<std::uint32_t>(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const auto dtype = dtype_of(get<std::int32_t>(in));
        std::vector<std::int64_t> shape(get<std::uint32_t>(in));
        for (auto& d : shape) d = get<std::int64_t>(in);
        auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
        if (!in) throw std::runtime_error("truncated weights file " + path.string());
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

NamedTensors module_state(const torch::nn::Module& module)
{
    NamedTensors out;
    for (const auto& p : module.named_parameters()) out.emplace_back(p.key(), p.value().detach().clone());
    for (const auto& b : module.named_buffers()) out.emplace_back(b.key(), b.value().detach().clone());
    return out;
}

void load_module_state(torch::nn::Module& module, const NamedTensors& state, const std::vector<std::string>& prefixes)
{
    std::map<std::string, torch::Tensor> targets;
    for (auto& p : module.named_parameters()) targets.emplace(p.key(), p.value());
    for (auto& b : module.named_buffers()) targets.emplace(b.key(), b.value());
    torch::NoGradGuard guard;
    for (const auto& [name, value] : state) {
        if (!has_prefix(name, prefixes)) continue;
        auto it = targets.find(name);
        if (it == targets.end()) throw std::runtime_error("weights contain unknown tensor '" + name + "'");
        if (!it->second.sizes().equals(value.sizes()))
            throw std::runtime_error("shape mismatch for tensor '" + name + "'");
        it->second.copy_(value);
    }
}

}  // namespace mlmt::core
