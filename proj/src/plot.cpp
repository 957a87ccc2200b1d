#include "driftvq/plot.hpp"

#include <algorithm>
#include <limits>
#include <ostream>

namespace driftvq {

namespace {

void grow(PlotFrame& f, const Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        f.min_x = std::min(f.min_x, m(i, 0));
        f.max_x = std::max(f.max_x, m(i, 0));
        const double y = m.cols() > 1 ? m(i, 1) : 0.0;
        f.min_y = std::min(f.min_y, y);
        f.max_y = std::max(f.max_y, y);
    }
}

Matrix cloud_at(const TraceLog& log, const TraceRecord& rec) {
    DriftProcess p = log.process;
    p.set_state(rec.state);
    return p.drifted_all();
}

struct Mapper {
    PlotFrame f;
    double w, h, pad = 20.0;
    double x(double v) const { return pad + (v - f.min_x) / (f.max_x - f.min_x) * (w - 2 * pad); }
    double y(double v) const { return h - pad - (v - f.min_y) / (f.max_y - f.min_y) * (h - 2 * pad); }
};

void dots(std::ostream& out, const Matrix& m, const Mapper& map, const std::string& color,
          double radius, double opacity) {
    out << "<g fill=\"" << color << "\" fill-opacity=\"" << opacity << "\">\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double y = m.cols() > 1 ? m(i, 1) : 0.0;
        out << "<circle cx=\"" << format_number(map.x(m(i, 0))) << "\" cy=\""
            << format_number(map.y(y)) << "\" r=\"" << radius << "\"/>\n";
    }
    out << "</g>\n";
}

}  // namespace

PlotFrame run_frame(const TraceLog& log) {
    const double inf = std::numeric_limits<double>::infinity();
    PlotFrame f{inf, -inf, inf, -inf};
    grow(f, log.process.base());
    grow(f, log.process.targets());
    grow(f, log.records.front().codebook);
    for (std::size_t s : log.snapshot_steps) {
        const TraceRecord& rec = log.at_step(s);
        grow(f, rec.codebook);
        grow(f, cloud_at(log, rec));
    }
    const double mx = 0.05 * std::max(f.max_x - f.min_x, 1e-9);
    const double my = 0.05 * std::max(f.max_y - f.min_y, 1e-9);
    return {f.min_x - mx, f.max_x + mx, f.min_y - my, f.max_y + my};
}

void write_snapshot_svg(std::ostream& out, const TraceLog& log, std::size_t step,
                        const PlotFrame& frame, const SvgStyle& style) {
    const TraceRecord& rec = log.at_step(step);
    const Mapper map{frame, style.width, style.height};
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\""
        << style.height << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"8\" y=\"14\" font-family=\"monospace\" font-size=\"11\">" << log.rule_label()
        << " / " << log.config.process_label() << " / step " << rec.step << " / usage "
        << format_number(rec.utilization) << "</text>\n";
    dots(out, log.process.targets(), map, style.target_color, 1.5, 0.25);
    dots(out, log.process.base(), map, style.base_color, 1.5, 0.35);
    dots(out, cloud_at(log, rec), map, style.current_color, 1.5, 0.6);
    out << "<g stroke=\"" << style.code_color << "\" stroke-width=\"2\">\n";
    for (std::size_t k = 0; k < rec.codebook.rows(); ++k) {
        const double cx = map.x(rec.codebook(k, 0));
        const double cy = map.y(rec.codebook.cols() > 1 ? rec.codebook(k, 1) : 0.0);
        out << "<path d=\"M" << format_number(cx - 5) << ' ' << format_number(cy - 5) << " L"
            << format_number(cx + 5) << ' ' << format_number(cy + 5) << " M"
            << format_number(cx - 5) << ' ' << format_number(cy + 5) << " L"
            << format_number(cx + 5) << ' ' << format_number(cy - 5) << "\"/>\n";
    }
    out << "</g>\n</svg>\n";
}

}  // namespace driftvq
