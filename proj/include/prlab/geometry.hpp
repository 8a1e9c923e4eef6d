#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prlab {

/// Axis-aligned box in continuous corner coordinates. Area is
/// (x2-x1)*(y2-y1); there is no "+1" pixel convention anywhere.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 <= x2 && y1 <= y2;
  }

  bool operator==(const BBox& o) const {
    return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
  }
};

/// Box regression parameterization: center offsets normalized by anchor
/// size, log size ratios.
struct BoxDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

/// Largest |dw|/|dh| applied at decode time; exp of this bounds the size
/// ratio of decoded boxes to their anchors.
inline constexpr double kDeltaClamp = 4.135166556742356;  // ln(1000/16)

struct DecodeStats {
  long long clamped = 0;
};

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

inline BoxDelta encode_delta(const BBox& anchor, const BBox& target) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  if (wa <= 0.0 || ha <= 0.0) throw std::invalid_argument("degenerate anchor");
  BoxDelta d;
  d.dx = (target.cx() - anchor.cx()) / wa;
  d.dy = (target.cy() - anchor.cy()) / ha;
  d.dw = std::log(target.width() / wa);
  d.dh = std::log(target.height() / ha);
  return d;
}

inline BBox decode_delta(const BBox& anchor, const BoxDelta& d, DecodeStats* stats = nullptr) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  if (wa <= 0.0 || ha <= 0.0) throw std::invalid_argument("degenerate anchor");
  double dw = d.dw;
  double dh = d.dh;
  if (dw > kDeltaClamp || dh > kDeltaClamp) {
    dw = std::min(dw, kDeltaClamp);
    dh = std::min(dh, kDeltaClamp);
    if (stats) ++stats->clamped;
  }
  const double cx = anchor.cx() + d.dx * wa;
  const double cy = anchor.cy() + d.dy * ha;
  const double w = wa * std::exp(dw);
  const double h = ha * std::exp(dh);
  return BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline BBox clip(const BBox& b, double width, double height) {
  auto cl = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  return BBox{cl(b.x1, width), cl(b.y1, height), cl(b.x2, width), cl(b.y2, height)};
}

}  // namespace prlab
