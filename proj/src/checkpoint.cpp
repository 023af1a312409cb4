#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "traceconf/errors.hpp"
#include "traceconf/estimator.hpp"

namespace traceconf {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'C', 'F', 'C', 'K', 'P', 'T', '1'};

void write_u64_le(std::ostream& out, uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

uint64_t read_u64_le(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_double_le(std::ostream& out, double d) {
    write_u64_le(out, std::bit_cast<uint64_t>(d));
}

double read_double_le(std::istream& in) {
    return std::bit_cast<double>(read_u64_le(in));
}

std::string alignment_name(align_mode a) {
    return a == align_mode::head ? "head" : "tail";
}

align_mode alignment_from_name(const std::string& s) {
    if (s == "tail") return align_mode::tail;
    if (s == "head") return align_mode::head;
    throw validation_error("checkpoint: unknown alignment \"" + s + "\"");
}

}  // namespace

void save_checkpoint(const estimator_checkpoint& ckpt, const std::string& path) {
    json header;
    header["format_version"] = ckpt.format_version;
    header["config"] = {{"l_max", ckpt.config.l_max},
                        {"channels", ckpt.config.channels},
                        {"blocks", ckpt.config.blocks},
                        {"kernel", ckpt.config.kernel},
                        {"head_hidden", ckpt.config.head_hidden},
                        {"learning_rate", ckpt.config.learning_rate},
                        {"batch_size", ckpt.config.batch_size},
                        {"max_epochs", ckpt.config.max_epochs},
                        {"patience", ckpt.config.patience},
                        {"seed", ckpt.config.seed},
                        {"alignment", alignment_name(ckpt.config.alignment)}};
    header["param_count"] = ckpt.params.size();
    json tensors = json::array();
    for (const auto& t : ckpt.layout.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    }
    header["tensors"] = tensors;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u64_le(out, header_str.size());
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    write_double_le(out, ckpt.norm_mean);
    write_double_le(out, ckpt.norm_std);
    for (const double p : ckpt.params) write_double_le(out, p);
    if (!out) throw io_error("failed writing checkpoint: " + path);
}

estimator_checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);

    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw validation_error("checkpoint: bad magic in " + path);
    }
    const uint64_t header_len = read_u64_le(in);
    if (!in || header_len > (1ull << 30)) {
        throw validation_error("checkpoint: implausible header length");
    }
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw validation_error("checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw validation_error(std::string("checkpoint: bad header: ") + e.what());
    }

    estimator_checkpoint ckpt;
    ckpt.format_version = header.at("format_version").get<int>();
    if (ckpt.format_version != 1) {
        throw validation_error("checkpoint: unsupported format version " +
                               std::to_string(ckpt.format_version));
    }
    const auto& cfg = header.at("config");
    ckpt.config.l_max = cfg.at("l_max").get<int>();
    ckpt.config.channels = cfg.at("channels").get<int>();
    ckpt.config.blocks = cfg.at("blocks").get<int>();
    ckpt.config.kernel = cfg.at("kernel").get<int>();
    ckpt.config.head_hidden = cfg.at("head_hidden").get<int>();
    ckpt.config.learning_rate = cfg.at("learning_rate").get<double>();
    ckpt.config.batch_size = cfg.at("batch_size").get<int>();
    ckpt.config.max_epochs = cfg.at("max_epochs").get<int>();
    ckpt.config.patience = cfg.at("patience").get<int>();
    ckpt.config.seed = cfg.at("seed").get<uint64_t>();
    ckpt.config.alignment = alignment_from_name(cfg.at("alignment").get<std::string>());
    ckpt.config.validate();

    ckpt.layout = make_layout(ckpt.config);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != ckpt.layout.tensors.size()) {
        throw validation_error("checkpoint: tensor count mismatch");
    }
    for (size_t i = 0; i < ckpt.layout.tensors.size(); ++i) {
        const auto& want = ckpt.layout.tensors[i];
        const auto& got = tensors[i];
        if (got.at("name").get<std::string>() != want.name ||
            got.at("shape").get<std::vector<int>>() != want.shape) {
            throw validation_error("checkpoint: tensor mismatch at \"" + want.name + "\"");
        }
    }
    if (header.at("param_count").get<size_t>() != ckpt.layout.total) {
        throw validation_error("checkpoint: parameter count mismatch");
    }

    ckpt.norm_mean = read_double_le(in);
    ckpt.norm_std = read_double_le(in);
    if (!(ckpt.norm_std > 0.0)) {
        throw validation_error("checkpoint: normalization std must be > 0");
    }
    ckpt.params.resize(ckpt.layout.total);
    for (auto& p : ckpt.params) p = read_double_le(in);
    if (!in) throw validation_error("checkpoint: truncated parameter data");
    return ckpt;
}

}  // namespace traceconf
