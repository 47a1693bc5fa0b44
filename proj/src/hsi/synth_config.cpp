#include "sfa/hsi/synth_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace sfa::hsi {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end) throw SynthConfigError("bad value for " + key + ": '" + text + "'");
    return v;
}

struct Field {
    std::string key;
    std::function<void(SynthConfig&, const std::string&)> set;
    std::function<std::string(const SynthConfig&)> get;
};

template <typename T>
std::string format(T v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <typename T, typename Access>
Field field(std::string key, Access access) {
    return {key, [key, access](SynthConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); },
            [access](const SynthConfig& c) { return format(access(const_cast<SynthConfig&>(c))); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> t = {
            field<std::uint64_t>("seed", [](SynthConfig& c) -> auto& { return c.seed; }),
            field<std::uint32_t>("image_size", [](SynthConfig& c) -> auto& { return c.image_size; }),
            field<std::uint32_t>("min_objects", [](SynthConfig& c) -> auto& { return c.min_objects; }),
            field<std::uint32_t>("max_objects", [](SynthConfig& c) -> auto& { return c.max_objects; }),
            field<float>("min_size", [](SynthConfig& c) -> auto& { return c.min_size; }),
            field<float>("max_size", [](SynthConfig& c) -> auto& { return c.max_size; }),
            field<float>("ellipse_fraction", [](SynthConfig& c) -> auto& { return c.ellipse_fraction; }),
            field<float>("angle_margin", [](SynthConfig& c) -> auto& { return c.angle_margin; }),
            field<float>("wavelength_min_nm", [](SynthConfig& c) -> auto& { return c.wavelength_min_nm; }),
            field<float>("wavelength_max_nm", [](SynthConfig& c) -> auto& { return c.wavelength_max_nm; }),
        };
        auto domain = [&](const std::string& p, DomainSpec SynthConfig::*d) {
            t.push_back(field<std::uint32_t>(p + "_bands", [d](SynthConfig& c) -> auto& { return (c.*d).bands; }));
            t.push_back(field<std::uint32_t>(p + "_count", [d](SynthConfig& c) -> auto& { return (c.*d).count; }));
            t.push_back(field<float>(p + "_size_scale", [d](SynthConfig& c) -> auto& { return (c.*d).size_scale; }));
            t.push_back(field<float>(p + "_noise_sigma", [d](SynthConfig& c) -> auto& { return (c.*d).noise_sigma; }));
            t.push_back(field<float>(p + "_brightness_min", [d](SynthConfig& c) -> auto& { return (c.*d).brightness_min; }));
            t.push_back(field<float>(p + "_brightness_max", [d](SynthConfig& c) -> auto& { return (c.*d).brightness_max; }));
            t.push_back(field<float>(p + "_background_gain", [d](SynthConfig& c) -> auto& { return (c.*d).background_gain; }));
        };
        domain("source", &SynthConfig::source);
        domain("target", &SynthConfig::target);
        return t;
    }();
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

SynthConfig parse_synth_config(const std::string& text) {
    SynthConfig cfg = reference_synth_config();
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw SynthConfigError(where + "expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (!seen.insert(key).second) throw SynthConfigError(where + "repeated key " + key);
        const auto& fs = fields();
        const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.key == key; });
        if (it == fs.end()) throw SynthConfigError(where + "unknown key '" + key + "'");
        it->set(cfg, trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

SynthConfig load_synth_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SynthConfigError("cannot open synth config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_synth_config(ss.str());
}

std::string dump_synth_config(const SynthConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
    return out;
}

}  // namespace sfa::hsi
