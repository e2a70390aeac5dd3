#include "wmu/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace wmu {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// Cuts a trailing comment, ignoring '#' inside double quotes.
std::string strip_comment(std::string_view line)
{
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return std::string(line.substr(0, i));
        }
    }
    return std::string(line);
}

std::string unquote(const std::string& v, int line_no)
{
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
        return v.substr(1, v.size() - 2);
    }
    if (!v.empty() && v.front() == '"') {
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated string");
    }
    return v;
}

// ["a", "b"] -> a,b
std::string flatten_array(const std::string& v, int line_no)
{
    if (v.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
    }
    std::string out;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!out.empty()) {
            out += ',';
        }
        out += unquote(trim(item), line_no);
    }
    return out;
}

std::int64_t to_int(const std::string& key, const std::string& v)
{
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
    }
    return out;
}

int to_int32(const std::string& key, const std::string& v)
{
    const auto x = to_int(key, v);
    if (x < INT32_MIN || x > INT32_MAX) {
        throw ConfigError("'" + key + "' out of range: " + v);
    }
    return static_cast<int>(x);
}

double to_double(const std::string& key, const std::string& v)
{
    char* end = nullptr;
    errno = 0;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
        throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    }
    return x;
}

bool to_bool(const std::string& key, const std::string& v)
{
    if (v == "true") {
        return true;
    }
    if (v == "false") {
        return false;
    }
    throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt_double(double x)
{
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

} // namespace

std::string to_string(LossNorm norm)
{
    return norm == LossNorm::Mean ? "mean" : "sum";
}

LossNorm parse_loss_norm(std::string_view text)
{
    if (text == "mean") {
        return LossNorm::Mean;
    }
    if (text == "sum") {
        return LossNorm::Sum;
    }
    throw ConfigError("loss_norm must be mean or sum, got '" + std::string(text) + "'");
}

std::vector<BackboneKind> parse_backbone_list(std::string_view text)
{
    std::vector<BackboneKind> out;
    std::stringstream ss{std::string(text)};
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_backbone(trim(item)));
    }
    if (out.empty()) {
        throw ConfigError("empty backbone list");
    }
    return out;
}

std::string backbone_list(const std::vector<BackboneKind>& kinds)
{
    std::string out;
    for (auto k : kinds) {
        if (!out.empty()) {
            out += ',';
        }
        out += to_string(k);
    }
    return out;
}

std::map<std::string, std::string> parse_flat_toml(std::string_view text)
{
    std::map<std::string, std::string> out;
    std::stringstream ss{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        const auto line = trim(strip_comment(raw));
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            throw ConfigError("line " + std::to_string(line_no) + ": tables are not supported in a flat config");
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const auto key = trim(std::string_view(line).substr(0, eq));
        auto value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
        }
        value = value.front() == '[' ? flatten_array(value, line_no) : unquote(value, line_no);
        if (!out.emplace(key, value).second) {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

void apply_settings(TrainConfig& cfg, const std::map<std::string, std::string>& kv)
{
    for (const auto& [key, v] : kv) {
        if (key == "iterations") {
            cfg.iterations = to_int32(key, v);
        } else if (key == "batch_size") {
            cfg.batch_size = to_int32(key, v);
        } else if (key == "lr0") {
            cfg.lr0 = to_double(key, v);
        } else if (key == "momentum") {
            cfg.momentum = to_double(key, v);
        } else if (key == "weight_decay") {
            cfg.weight_decay = to_double(key, v);
        } else if (key == "val_every") {
            cfg.val_every = to_int32(key, v);
        } else if (key == "seed") {
            const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), cfg.seed);
            if (ec != std::errc{} || p != v.data() + v.size()) {
                throw ConfigError("'seed' expects an unsigned 64-bit integer, got '" + v + "'");
            }
        } else if (key == "backbones") {
            cfg.backbones = parse_backbone_list(v);
        } else if (key == "image_size") {
            cfg.image_size = to_int32(key, v);
        } else if (key == "width") {
            cfg.width = to_int32(key, v);
        } else if (key == "coverage") {
            cfg.coverage = to_double(key, v);
        } else if (key == "lr_decay_power") {
            cfg.lr_decay_power = to_double(key, v);
        } else if (key == "loss_norm") {
            cfg.loss_norm = parse_loss_norm(v);
        } else if (key == "num_classes") {
            cfg.num_classes = to_int32(key, v);
        } else if (key == "patch") {
            cfg.patch = to_int32(key, v);
        } else if (key == "window") {
            cfg.window = to_int32(key, v);
        } else if (key == "d_state") {
            cfg.d_state = to_int32(key, v);
        } else if (key == "augment") {
            cfg.augment = to_bool(key, v);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

TrainConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    TrainConfig cfg;
    try {
        apply_settings(cfg, parse_flat_toml(ss.str()));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return cfg;
}

void TrainConfig::validate() const
{
    if (iterations <= 0) {
        throw ConfigError("iterations must be positive");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be at least 1");
    }
    if (!(lr0 > 0)) {
        throw ConfigError("lr0 must be positive");
    }
    if (momentum < 0 || weight_decay < 0 || lr_decay_power < 0) {
        throw ConfigError("momentum, weight_decay and lr_decay_power must be non-negative");
    }
    if (val_every < 1 || val_every > iterations) {
        throw ConfigError("val_every must lie in [1, iterations]");
    }
    if (!(coverage > 0 && coverage <= 1)) {
        throw ConfigError("coverage must lie in (0, 1]");
    }
    if (num_classes < 2 || num_classes > 255) {
        throw ConfigError("num_classes must lie in [2, 255]");
    }
    if (backbones.size() != 1 && backbones.size() != 3) {
        throw ConfigError("backbones needs 3 entries (or 1 for the baseline), got " +
                          std::to_string(backbones.size()));
    }
    for (auto k : backbones) {
        wmu::validate(arch(k));
    }
}

ArchConfig TrainConfig::arch(BackboneKind kind) const
{
    ArchConfig a;
    a.kind = kind;
    a.image_size = image_size;
    a.num_classes = num_classes;
    a.width = width;
    a.patch = patch;
    a.window = window;
    a.d_state = d_state;
    return a;
}

std::string TrainConfig::to_text() const
{
    std::ostringstream os;
    os << "iterations = " << iterations << '\n'
       << "batch_size = " << batch_size << '\n'
       << "lr0 = " << fmt_double(lr0) << '\n'
       << "momentum = " << fmt_double(momentum) << '\n'
       << "weight_decay = " << fmt_double(weight_decay) << '\n'
       << "val_every = " << val_every << '\n'
       << "seed = " << seed << '\n'
       << "backbones = \"" << backbone_list(backbones) << "\"\n"
       << "image_size = " << image_size << '\n'
       << "width = " << width << '\n'
       << "coverage = " << fmt_double(coverage) << '\n'
       << "lr_decay_power = " << fmt_double(lr_decay_power) << '\n'
       << "loss_norm = \"" << to_string(loss_norm) << "\"\n"
       << "num_classes = " << num_classes << '\n'
       << "patch = " << patch << '\n'
       << "window = " << window << '\n'
       << "d_state = " << d_state << '\n'
       << "augment = " << (augment ? "true" : "false") << '\n';
    return os.str();
}

} // namespace wmu
