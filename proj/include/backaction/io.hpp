#pragma once

// Flat key=value configs with environment overrides, CSV output at full double
// precision, and a small self-contained SVG line-plot renderer. All file output
// goes through an atomic write (temp file + rename) so failed runs leave no
// partial artifacts behind.

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

extern char** environ;

namespace backaction {

inline constexpr int exit_ok = 0;
inline constexpr int exit_config_error = 2;
inline constexpr int exit_simulation_error = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace detail

// Ordered key=value store. Values are kept verbatim, so
// parse(serialize(c)) == c exactly.
class Config {
public:
    static Config parse_string(const std::string& text) {
        Config c;
        std::size_t pos = 0, line = 0;
        while (pos <= text.size()) {
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            ++line;
            std::string raw = detail::trim(text.substr(pos, nl - pos));
            pos = nl + 1;
            if (raw.empty() || raw[0] == '#') continue;
            std::size_t eq = raw.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line) + ": missing '='");
            std::string key = detail::trim(raw.substr(0, eq));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(line) + ": empty key");
            c.set(key, detail::trim(raw.substr(eq + 1)));
        }
        return c;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        return parse_string(text);
    }

    // Environment wins over the file: BACKACTION_FOO_BAR overrides key
    // "foo_bar" (and introduces it when absent).
    void apply_env_overrides(const std::string& prefix = "BACKACTION_") {
        for (char** e = environ; e && *e; ++e) {
            const std::string entry(*e);
            if (entry.rfind(prefix, 0) != 0) continue;
            const std::size_t eq = entry.find('=');
            if (eq == std::string::npos || eq == prefix.size()) continue;
            std::string key = entry.substr(prefix.size(), eq - prefix.size());
            for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            set(key, entry.substr(eq + 1));
        }
    }

    bool has(const std::string& key) const { return find(key) != nullptr; }

    std::string raw(const std::string& key) const {
        const std::string* v = find(key);
        if (!v) throw ConfigError("missing config key: " + key);
        return *v;
    }

    std::string get_string(const std::string& key, const std::string& def) const {
        const std::string* v = find(key);
        return v ? *v : def;
    }

    double get_double(const std::string& key, double def) const {
        const std::string* v = find(key);
        if (!v) return def;
        char* end = nullptr;
        errno = 0;
        const double x = std::strtod(v->c_str(), &end);
        if (errno != 0 || end == v->c_str() || *end != '\0')
            throw ConfigError("config key '" + key + "': not a number: " + *v);
        return x;
    }

    long long get_int(const std::string& key, long long def) const {
        const std::string* v = find(key);
        if (!v) return def;
        char* end = nullptr;
        errno = 0;
        const long long x = std::strtoll(v->c_str(), &end, 10);
        if (errno != 0 || end == v->c_str() || *end != '\0')
            throw ConfigError("config key '" + key + "': not an integer: " + *v);
        return x;
    }

    bool get_bool(const std::string& key, bool def) const {
        const std::string* v = find(key);
        if (!v) return def;
        if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
        if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
        throw ConfigError("config key '" + key + "': not a boolean: " + *v);
    }

    void set(const std::string& key, const std::string& value) {
        for (auto& kv : items_)
            if (kv.first == key) { kv.second = value; return; }
        items_.emplace_back(key, value);
    }

    std::string serialize() const {
        std::string out;
        for (const auto& kv : items_) {
            out += kv.first;
            out += '=';
            out += kv.second;
            out += '\n';
        }
        return out;
    }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

    bool operator==(const Config& other) const { return items_ == other.items_; }

private:
    const std::string* find(const std::string& key) const {
        for (const auto& kv : items_)
            if (kv.first == key) return &kv.second;
        return nullptr;
    }

    std::vector<std::pair<std::string, std::string>> items_;
};

// shortest representation that round-trips a double (17 significant digits)
inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// temp-file-plus-rename; removes the temp file on any failure
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            out.close();
            std::remove(tmp.c_str());
            throw std::runtime_error("short write: " + tmp);
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw std::runtime_error("cannot rename into place: " + path);
    }
}

// Columnar CSV, LF line endings, full double precision.
inline std::string render_csv(const std::vector<std::string>& header,
                              const std::vector<std::vector<double>>& columns) {
    if (header.size() != columns.size())
        throw std::invalid_argument("render_csv: header/column count mismatch");
    std::size_t rows = 0;
    for (const auto& c : columns) {
        if (!rows) rows = c.size();
        else if (c.size() != rows)
            throw std::invalid_argument("render_csv: ragged columns");
    }
    std::string out;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j) out += ',';
        out += header[j];
    }
    out += '\n';
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < columns.size(); ++j) {
            if (j) out += ',';
            out += format_full(columns[j][i]);
        }
        out += '\n';
    }
    return out;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
    write_file_atomic(path, render_csv(header, columns));
}

// ---- SVG line plots ----

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
    bool dashed = false;
};

struct SvgPlotSpec {
    std::string title, xlabel, ylabel;
    bool logY = false;
    int width = 800, height = 560;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

inline const char* svg_palette(std::size_t i) {
    static const char* colors[] = {"#1f6fb4", "#d1632a", "#3a923a", "#b23a3a",
                                   "#7b5ea7", "#777733"};
    return colors[i % 6];
}

} // namespace detail

inline std::string render_line_plot(const SvgPlotSpec& spec,
                                    const std::vector<SvgSeries>& series) {
    const double ml = 78, mr = 26, mt = 46, mb = 58;
    const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (spec.logY && !(s.y[i] > 0.0)) continue;
            const double yv = spec.logY ? std::log10(s.y[i]) : s.y[i];
            if (first) { xmin = xmax = s.x[i]; ymin = ymax = yv; first = false; continue; }
            xmin = std::min(xmin, s.x[i]); xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, yv); ymax = std::max(ymax, yv);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double yv) { return mt + ph - (yv - ymin) / (ymax - ymin) * ph; };

    char buf[256];
    std::string svg;
    std::snprintf(buf, sizeof buf,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" "
        "width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\">\n",
        spec.width, spec.height, spec.width, spec.height);
    svg += buf;
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
        "<text x=\"%g\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" "
        "text-anchor=\"middle\">%s</text>\n",
        ml + pw / 2, detail::xml_escape(spec.title).c_str());
    svg += buf;

    // frame
    std::snprintf(buf, sizeof buf,
        "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" "
        "stroke=\"black\" stroke-width=\"1\"/>\n", ml, mt, pw, ph);
    svg += buf;

    // ticks
    const int nx = 6;
    for (int i = 0; i <= nx; ++i) {
        const double xv = xmin + (xmax - xmin) * i / nx;
        std::snprintf(buf, sizeof buf,
            "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
            px(xv), mt + ph, px(xv), mt + ph + 5);
        svg += buf;
        std::snprintf(buf, sizeof buf,
            "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
            "text-anchor=\"middle\">%.3g</text>\n", px(xv), mt + ph + 18, xv);
        svg += buf;
    }
    if (spec.logY) {
        const int d0 = static_cast<int>(std::ceil(ymin - 1e-9));
        const int d1 = static_cast<int>(std::floor(ymax + 1e-9));
        for (int d = d0; d <= d1; ++d) {
            std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                ml - 5, py(d), ml, py(d));
            svg += buf;
            std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                "text-anchor=\"end\">1e%d</text>\n", ml - 8, py(d) + 4, d);
            svg += buf;
        }
    } else {
        const int ny = 6;
        for (int i = 0; i <= ny; ++i) {
            const double yv = ymin + (ymax - ymin) * i / ny;
            std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                ml - 5, py(yv), ml, py(yv));
            svg += buf;
            std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                "text-anchor=\"end\">%.3g</text>\n", ml - 8, py(yv) + 4, yv);
            svg += buf;
        }
    }

    // axis labels
    std::snprintf(buf, sizeof buf,
        "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"13\" "
        "text-anchor=\"middle\">%s</text>\n",
        ml + pw / 2, mt + ph + 42, detail::xml_escape(spec.xlabel).c_str());
    svg += buf;
    std::snprintf(buf, sizeof buf,
        "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"13\" "
        "text-anchor=\"middle\" transform=\"rotate(-90 %g %g)\">%s</text>\n",
        20.0, mt + ph / 2, 20.0, mt + ph / 2, detail::xml_escape(spec.ylabel).c_str());
    svg += buf;

    // series
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (spec.logY && !(s.y[i] > 0.0)) continue;
            const double yv = spec.logY ? std::log10(s.y[i]) : s.y[i];
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s.x[i]), py(yv));
            pts += buf;
        }
        std::snprintf(buf, sizeof buf,
            "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"1.5\"%s points=\"",
            detail::svg_palette(si), s.dashed ? " stroke-dasharray=\"6 4\"" : "");
        svg += buf;
        svg += pts;
        svg += "\"/>\n";
        // legend entry
        const double ly = mt + 16 + 16 * static_cast<double>(si);
        std::snprintf(buf, sizeof buf,
            "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" "
            "stroke-width=\"1.5\"%s/>\n",
            ml + pw - 150, ly, ml + pw - 122, ly, detail::svg_palette(si),
            s.dashed ? " stroke-dasharray=\"6 4\"" : "");
        svg += buf;
        std::snprintf(buf, sizeof buf,
            "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\">%s</text>\n",
            ml + pw - 116, ly + 4, detail::xml_escape(s.label).c_str());
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

inline void write_svg_plot(const std::string& path, const SvgPlotSpec& spec,
                           const std::vector<SvgSeries>& series) {
    write_file_atomic(path, render_line_plot(spec, series));
}

} // namespace backaction
