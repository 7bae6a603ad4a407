#pragma once

// Minimal SVG writer. Numbers are printed with fixed precision so identical
// inputs give byte-identical files.

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace tart::svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

class Canvas {
 public:
  Canvas(double width, double height) : width_(width), height_(height) {}

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
             "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\"/>\n";
  }

  void line(double x0, double y0, double x1, double y1, const std::string& stroke, double width = 1.0,
            bool dashed = false) {
    body_ += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y1) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"" +
             (dashed ? " stroke-dasharray=\"4 3\"" : "") + "/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.5) {
    if (pts.empty()) return;
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\" points=\"";
    for (const auto& [x, y] : pts) body_ += num(x) + "," + num(y) + " ";
    body_ += "\"/>\n";
  }

  // Closed filled polygon, used for shaded bands.
  void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& fill, double opacity) {
    if (pts.empty()) return;
    body_ += "<polygon fill=\"" + fill + "\" fill-opacity=\"" + num(opacity) + "\" stroke=\"none\" points=\"";
    for (const auto& [x, y] : pts) body_ += num(x) + "," + num(y) + " ";
    body_ += "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 12, const std::string& anchor = "start") {
    std::string esc;
    for (char c : s) {
      if (c == '<') esc += "&lt;";
      else if (c == '>') esc += "&gt;";
      else if (c == '&') esc += "&amp;";
      else esc += c;
    }
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
             "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\">" + esc + "</text>\n";
  }

  std::string str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width_) + "\" height=\"" + num(height_) +
           "\" viewBox=\"0 0 " + num(width_) + " " + num(height_) + "\">\n" + body_ + "</svg>\n";
  }

 private:
  double width_, height_;
  std::string body_;
};

}  // namespace tart::svg
