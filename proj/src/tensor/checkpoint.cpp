#include "itcfn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace itcfn {

namespace {

constexpr char kMagic[4] = {'I', 'T', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }

    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t.tensor;
    }
    throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     const std::string& metadata) {
    std::string out(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        put_u32(out, static_cast<std::uint32_t>(nt.name.size()));
        out += nt.name;
        put_u32(out, static_cast<std::uint32_t>(nt.tensor.rank()));
        for (auto d : nt.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : nt.tensor.data()) put_f32(out, v);
    }
    put_u32(out, static_cast<std::uint32_t>(metadata.size()));
    out += metadata;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path.string());
    Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
    if (r.str(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("bad checkpoint magic in " + path.string());
    const auto version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto count = r.u32("tensor count");
    for (std::uint32_t t = 0; t < count; ++t) {
        NamedTensor nt;
        nt.name = r.str(r.u32("name length"), "name");
        Shape shape(r.u32("rank"));
        for (auto& d : shape) d = r.u32("dims");
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = r.f32("tensor data");
        nt.tensor = Tensor::from_data(shape, std::move(data));
        ckpt.tensors.push_back(std::move(nt));
    }
    ckpt.metadata = r.str(r.u32("metadata length"), "metadata");
    if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint payload");
    return ckpt;
}

void restore_tensors(const Checkpoint& ckpt, const std::vector<NamedTensor>& targets) {
    for (const auto& nt : targets) {
        const Tensor& src = ckpt.get(nt.name);
        if (src.shape() != nt.tensor.shape()) {
            throw CheckpointError("shape mismatch for '" + nt.name + "': checkpoint " + shape_str(src.shape()) +
                                  ", model " + shape_str(nt.tensor.shape()));
        }
        Tensor dst = nt.tensor;
        auto d = dst.mutable_data();
        std::copy(src.data().begin(), src.data().end(), d.begin());
    }
}

std::uint64_t parameter_checksum(const std::vector<NamedTensor>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            h ^= (v >> (8 * i)) & 0xFF;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& nt : tensors) {
        for (char c : nt.name) mix(static_cast<unsigned char>(c));
        for (double v : nt.tensor.data()) mix(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return h;
}

}  // namespace itcfn
