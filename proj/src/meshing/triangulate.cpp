// Constrained Delaunay triangulation with Ruppert-style refinement.
//
// Vertices are inserted by Bowyer-Watson inside a super triangle, boundary
// segments are recovered by edge flips, the exterior and holes are carved
// away, and the remaining triangles are refined by circumcenter insertion.
// Circumcenters that encroach a boundary segment are rejected in favour of
// splitting the segment at its midpoint.

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numbers>
#include <queue>

#include "meshdens/meshing.hpp"
#include "triangulate_impl.hpp"

namespace meshdens {
namespace {

constexpr int kNone = -1;

double incircle(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  return (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy) +
         (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
}

Vec2 circumcenter(Vec2 a, Vec2 b, Vec2 c) {
  const Vec2 ab = b - a, ac = c - a;
  const double d = 2.0 * cross(ab, ac);
  const double ab2 = dot(ab, ab), ac2 = dot(ac, ac);
  return {a.x + (ac.y * ab2 - ab.y * ac2) / d, a.y + (ab.x * ac2 - ac.x * ab2) / d};
}

bool proper_cross(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const double o1 = orient(a, b, c), o2 = orient(a, b, d);
  const double o3 = orient(c, d, a), o4 = orient(c, d, b);
  return ((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0));
}

struct Tri {
  std::array<int, 3> v{};
  std::array<int, 3> nb{kNone, kNone, kNone};
  std::array<int, 3> seg{-1, -1, -1};
  bool alive = true;
};

struct Segment {
  Vec2 direction;  // interior lies to the left
  BoundaryTag tag;
};

class Cdt {
 public:
  explicit Cdt(const MeshingOptions& opts) : opts_(opts) {
    pts_ = {{-3.0, -3.0}, {7.0, -3.0}, {-3.0, 7.0}};
    vtri_ = {0, 0, 0};
    Tri t;
    t.v = {0, 1, 2};
    tris_.push_back(t);
  }

  TriangleMesh build(const DomainSpec& domain, const TriSizeFn& size);

 private:
  struct BEdge {
    int a, b, outer, seg;
  };

  int new_tri(int a, int b, int c) {
    int t;
    if (!free_.empty()) {
      t = free_.back();
      free_.pop_back();
      tris_[static_cast<std::size_t>(t)] = Tri{};
    } else {
      t = static_cast<int>(tris_.size());
      tris_.emplace_back();
    }
    Tri& T = tri(t);
    T.v = {a, b, c};
    vtri_[static_cast<std::size_t>(a)] = vtri_[static_cast<std::size_t>(b)] = vtri_[static_cast<std::size_t>(c)] = t;
    ++alive_count_;
    return t;
  }

  void kill(int t) {
    tri(t).alive = false;
    free_.push_back(t);
    --alive_count_;
  }

  Tri& tri(int t) { return tris_[static_cast<std::size_t>(t)]; }
  const Tri& tri(int t) const { return tris_[static_cast<std::size_t>(t)]; }
  Vec2 pt(int v) const { return pts_[static_cast<std::size_t>(v)]; }

  static int edge_of(const Tri& T, int a, int b) {
    for (int i = 0; i < 3; ++i) {
      const int p = T.v[(i + 1) % 3], q = T.v[(i + 2) % 3];
      if ((p == a && q == b) || (p == b && q == a)) return i;
    }
    return -1;
  }

  static int index_of(const Tri& T, int v) {
    for (int i = 0; i < 3; ++i)
      if (T.v[i] == v) return i;
    return -1;
  }

  void relink(int outer, int a, int b, int t) {
    if (outer == kNone) return;
    Tri& O = tri(outer);
    const int j = edge_of(O, a, b);
    if (j >= 0) O.nb[j] = t;
  }

  bool in_circle(int t, Vec2 p) const {
    const Tri& T = tri(t);
    return incircle(pt(T.v[0]), pt(T.v[1]), pt(T.v[2]), p) > 0.0;
  }

  struct WalkResult {
    int tri = kNone;
    int blocked = -1;  // edge of `tri` through which p lies beyond a constraint
  };

  WalkResult walk(int start, Vec2 p, bool stop_at_constraints) const;
  int insert_point(Vec2 p, int start, int split_edge = -1);
  bool collect_cavity(Vec2 p, int start, int split_edge, std::vector<int>& cavity, std::vector<BEdge>& boundary);
  void flip(int t, int i);
  std::pair<int, int> find_edge(int a, int b) const;
  void insert_segment(int a, int b, int marker, int depth = 0);
  void make_delaunay();
  void remove_exterior();
  void refine(const TriSizeFn& size);
  void split_segment(int t, int i);
  TriangleMesh extract() const;

  const MeshingOptions& opts_;
  std::vector<Vec2> pts_;
  std::vector<Tri> tris_;
  std::vector<int> free_;
  std::vector<int> vtri_;
  std::vector<Segment> segments_;
  std::vector<unsigned> stamp_;
  unsigned generation_ = 0;
  std::size_t alive_count_ = 1;
  int hint_ = 0;
  std::uint64_t walk_state_ = 0x2545F4914F6CDD1DULL;
};

Cdt::WalkResult Cdt::walk(int start, Vec2 p, bool stop_at_constraints) const {
  int t = start;
  std::uint64_t state = walk_state_;
  const std::size_t max_steps = 4 * tris_.size() + 64;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Tri& T = tri(t);
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    const int rot = static_cast<int>((state >> 33) % 3);
    int next = kNone;
    for (int k = 0; k < 3; ++k) {
      const int i = (k + rot) % 3;
      if (orient(pt(T.v[(i + 1) % 3]), pt(T.v[(i + 2) % 3]), p) < 0.0) {
        if (T.nb[i] == kNone || (stop_at_constraints && T.seg[i] >= 0)) return {t, i};
        next = T.nb[i];
        break;
      }
    }
    if (next == kNone) return {t, -1};
    t = next;
  }
  // Cycling walk (possible in constrained triangulations): linear scan.
  for (std::size_t s = 0; s < tris_.size(); ++s) {
    const Tri& T = tris_[s];
    if (!T.alive) continue;
    if (orient(pt(T.v[0]), pt(T.v[1]), p) >= 0 && orient(pt(T.v[1]), pt(T.v[2]), p) >= 0 &&
        orient(pt(T.v[2]), pt(T.v[0]), p) >= 0)
      return {static_cast<int>(s), -1};
  }
  return {start, -2};
}

bool Cdt::collect_cavity(Vec2 p, int start, int split_edge, std::vector<int>& cavity,
                         std::vector<BEdge>& boundary) {
  if (stamp_.size() < tris_.size()) stamp_.resize(tris_.size(), 0);
  ++generation_;
  cavity.clear();
  cavity.push_back(start);
  stamp_[static_cast<std::size_t>(start)] = generation_;
  for (std::size_t k = 0; k < cavity.size(); ++k) {
    const Tri& T = tri(cavity[k]);
    for (int i = 0; i < 3; ++i) {
      const int n = T.nb[i];
      if (n == kNone || T.seg[i] >= 0 || stamp_[static_cast<std::size_t>(n)] == generation_) continue;
      if (in_circle(n, p)) {
        stamp_[static_cast<std::size_t>(n)] = generation_;
        cavity.push_back(n);
      }
    }
  }
  // Keep the cavity star-shaped with respect to p.
  for (int guard = 0; guard < 1000; ++guard) {
    boundary.clear();
    int offender = kNone;
    for (int t : cavity) {
      const Tri& T = tri(t);
      for (int i = 0; i < 3; ++i) {
        const int n = T.nb[i];
        if (n != kNone && T.seg[i] < 0 && stamp_[static_cast<std::size_t>(n)] == generation_) continue;
        const int a = T.v[(i + 1) % 3], b = T.v[(i + 2) % 3];
        if (t == start && i == split_edge) {
          boundary.push_back({a, b, n, T.seg[i]});
          continue;
        }
        if (orient(pt(a), pt(b), p) <= 0.0 && offender == kNone) offender = t;
        boundary.push_back({a, b, n, T.seg[i]});
      }
    }
    if (offender == kNone) return true;
    if (offender == start) return false;
    stamp_[static_cast<std::size_t>(offender)] = 0;
    cavity.erase(std::find(cavity.begin(), cavity.end(), offender));
  }
  return false;
}

int Cdt::insert_point(Vec2 p, int start, int split_edge) {
  std::vector<int> cavity;
  std::vector<BEdge> boundary;
  if (!collect_cavity(p, start, split_edge, cavity, boundary)) return kNone;

  int split_a = -1, split_b = -1, split_seg = -1;
  if (split_edge >= 0) {
    const Tri& S = tri(start);
    split_a = S.v[(split_edge + 1) % 3];
    split_b = S.v[(split_edge + 2) % 3];
    split_seg = S.seg[split_edge];
  }

  const int pi = static_cast<int>(pts_.size());
  pts_.push_back(p);
  vtri_.push_back(kNone);
  for (int t : cavity) kill(t);

  std::vector<std::pair<int, int>> by_start, by_end;  // vertex -> new triangle
  std::vector<int> created;
  for (const auto& e : boundary) {
    if (e.a == split_a && e.b == split_b) continue;
    const int t = new_tri(e.a, e.b, pi);
    Tri& T = tri(t);
    T.nb[2] = e.outer;
    T.seg[2] = e.seg;
    relink(e.outer, e.a, e.b, t);
    by_start.emplace_back(e.a, t);
    by_end.emplace_back(e.b, t);
    created.push_back(t);
  }
  auto find = [](const std::vector<std::pair<int, int>>& v, int key) {
    for (auto [k, t] : v)
      if (k == key) return t;
    return kNone;
  };
  for (int t : created) {
    Tri& T = tri(t);
    const int a = T.v[0], b = T.v[1];
    T.nb[0] = find(by_start, b);  // across b-p
    if (T.nb[0] == kNone) T.seg[0] = split_seg;
    T.nb[1] = find(by_end, a);  // across p-a
    if (T.nb[1] == kNone) T.seg[1] = split_seg;
  }
  hint_ = created.empty() ? hint_ : created.front();
  return pi;
}

void Cdt::flip(int t, int i) {
  const int u = tri(t).nb[i];
  const int p = tri(t).v[i], q = tri(t).v[(i + 1) % 3], r = tri(t).v[(i + 2) % 3];
  const int j = edge_of(tri(u), q, r);
  const int s = tri(u).v[j];
  const int iq_u = index_of(tri(u), q), ir_u = index_of(tri(u), r);

  const int n_rp = tri(t).nb[(i + 1) % 3], s_rp = tri(t).seg[(i + 1) % 3];
  const int n_pq = tri(t).nb[(i + 2) % 3], s_pq = tri(t).seg[(i + 2) % 3];
  const int n_qs = tri(u).nb[ir_u], s_qs = tri(u).seg[ir_u];
  const int n_sr = tri(u).nb[iq_u], s_sr = tri(u).seg[iq_u];

  Tri& T = tri(t);
  T.v = {p, q, s};
  T.nb = {n_qs, u, n_pq};
  T.seg = {s_qs, -1, s_pq};
  Tri& U = tri(u);
  U.v = {p, s, r};
  U.nb = {n_sr, n_rp, t};
  U.seg = {s_sr, s_rp, -1};
  relink(n_qs, q, s, t);
  relink(n_rp, r, p, u);
  vtri_[static_cast<std::size_t>(p)] = t;
  vtri_[static_cast<std::size_t>(q)] = t;
  vtri_[static_cast<std::size_t>(s)] = t;
  vtri_[static_cast<std::size_t>(r)] = u;
}

std::pair<int, int> Cdt::find_edge(int a, int b) const {
  const int start = vtri_[static_cast<std::size_t>(a)];
  // Rotate around a in both directions.
  for (int dir = 0; dir < 2; ++dir) {
    int t = start;
    for (int guard = 0; guard < 4096 && t != kNone; ++guard) {
      const Tri& T = tri(t);
      const int e = edge_of(T, a, b);
      if (e >= 0) return {t, e};
      const int ia = index_of(T, a);
      if (ia < 0) break;
      t = T.nb[dir == 0 ? (ia + 2) % 3 : (ia + 1) % 3];
      if (t == start) break;
    }
  }
  return {kNone, -1};
}

void Cdt::insert_segment(int a, int b, int marker, int depth) {
  if (a == b) return;
  if (depth > 64) throw MeshingError("segment recovery did not converge");
  const Vec2 pa = pt(a), pb = pt(b);
  auto mark = [&](int x, int y) {
    auto [t, e] = find_edge(x, y);
    if (t == kNone) return false;
    tri(t).seg[e] = marker;
    const int n = tri(t).nb[e];
    if (n != kNone) tri(n).seg[edge_of(tri(n), x, y)] = marker;
    return true;
  };
  if (mark(a, b)) return;

  // Find the triangle at a whose opposite edge the segment crosses.
  int t = vtri_[static_cast<std::size_t>(a)];
  int cross_edge = -1;
  for (int guard = 0; guard < 4096; ++guard) {
    const Tri& T = tri(t);
    const int ia = index_of(T, a);
    const int c = T.v[(ia + 1) % 3], d = T.v[(ia + 2) % 3];
    const double oc = orient(pa, pb, pt(c)), od = orient(pa, pb, pt(d));
    if (oc == 0.0 && dot(pt(c) - pa, pb - pa) > 0.0) {
      insert_segment(a, c, marker, depth + 1);
      insert_segment(c, b, marker, depth + 1);
      return;
    }
    if (od == 0.0 && dot(pt(d) - pa, pb - pa) > 0.0) {
      insert_segment(a, d, marker, depth + 1);
      insert_segment(d, b, marker, depth + 1);
      return;
    }
    if (oc < 0.0 && od > 0.0) {
      cross_edge = ia;
      break;
    }
    t = T.nb[(ia + 2) % 3];
    if (t == kNone) break;
  }
  if (cross_edge < 0) throw MeshingError("segment recovery: no crossing edge found");

  std::deque<std::pair<int, int>> crossing;
  {
    int cur = t, e = cross_edge;
    for (int guard = 0; guard < 100000; ++guard) {
      const Tri& T = tri(cur);
      const int c = T.v[(e + 1) % 3], d = T.v[(e + 2) % 3];
      crossing.emplace_back(c, d);
      const int n = T.nb[e];
      if (n == kNone) throw MeshingError("segment recovery left the triangulation");
      const Tri& N = tri(n);
      const int j = edge_of(N, c, d);
      const int x = N.v[j];
      if (x == b) break;
      const double ox = orient(pa, pb, pt(x));
      if (ox == 0.0) {
        insert_segment(a, x, marker, depth + 1);
        insert_segment(x, b, marker, depth + 1);
        return;
      }
      // Leave N through the edge joining x to the vertex on the far side.
      const double oc = orient(pa, pb, pt(c));
      const int other = ((ox > 0.0) == (oc > 0.0)) ? d : c;
      cur = n;
      e = edge_of(N, x, other);
    }
  }

  for (std::size_t guard = 0; !crossing.empty(); ++guard) {
    if (guard > 100000) throw MeshingError("segment recovery: flip loop did not terminate");
    const auto [u, w] = crossing.front();
    crossing.pop_front();
    const auto [t0, e0] = find_edge(u, w);
    if (t0 == kNone) throw MeshingError("segment recovery: lost a crossing edge");
    const int n0 = tri(t0).nb[e0];
    const int x = tri(t0).v[e0];
    const int y = tri(n0).v[edge_of(tri(n0), u, w)];
    const bool convex = proper_cross(pt(u), pt(w), pt(x), pt(y));
    if (!convex) {
      crossing.emplace_back(u, w);
      continue;
    }
    flip(t0, e0);
    if (x != a && x != b && y != a && y != b && proper_cross(pa, pb, pt(x), pt(y))) crossing.emplace_back(x, y);
  }
  if (!mark(a, b)) throw MeshingError("segment recovery: segment missing after flips");
}

void Cdt::make_delaunay() {
  std::vector<std::pair<int, int>> stack;
  for (std::size_t s = 0; s < tris_.size(); ++s) {
    const Tri& T = tris_[s];
    if (!T.alive) continue;
    for (int i = 0; i < 3; ++i)
      if (T.nb[i] != kNone && T.seg[i] < 0 && T.nb[i] > static_cast<int>(s)) stack.emplace_back(T.v[(i + 1) % 3], T.v[(i + 2) % 3]);
  }
  const std::size_t max_flips = 20 * (stack.size() + 16);
  std::size_t flips = 0;
  while (!stack.empty() && flips < max_flips) {
    const auto [x, y] = stack.back();
    stack.pop_back();
    const auto [t, e] = find_edge(x, y);
    if (t == kNone || tri(t).seg[e] >= 0) continue;
    const int n = tri(t).nb[e];
    if (n == kNone) continue;
    const int p = tri(t).v[e];
    const int q = tri(n).v[edge_of(tri(n), x, y)];
    if (!in_circle(t, pt(q)) || !proper_cross(pt(x), pt(y), pt(p), pt(q))) continue;
    flip(t, e);
    ++flips;
    stack.emplace_back(p, x);
    stack.emplace_back(x, q);
    stack.emplace_back(q, y);
    stack.emplace_back(y, p);
  }
}

void Cdt::remove_exterior() {
  std::vector<char> out(tris_.size(), 0);
  std::vector<int> stack;
  for (std::size_t s = 0; s < tris_.size(); ++s) {
    const Tri& T = tris_[s];
    if (!T.alive) continue;
    bool seed = T.v[0] < 3 || T.v[1] < 3 || T.v[2] < 3;
    for (int i = 0; i < 3 && !seed; ++i) {
      if (T.seg[i] < 0) continue;
      const Vec2 d = pt(T.v[(i + 2) % 3]) - pt(T.v[(i + 1) % 3]);
      if (dot(d, segments_[static_cast<std::size_t>(T.seg[i])].direction) < 0.0) seed = true;
    }
    if (seed) {
      out[s] = 1;
      stack.push_back(static_cast<int>(s));
    }
  }
  while (!stack.empty()) {
    const int t = stack.back();
    stack.pop_back();
    const Tri& T = tri(t);
    for (int i = 0; i < 3; ++i) {
      const int n = T.nb[i];
      if (n == kNone || T.seg[i] >= 0 || out[static_cast<std::size_t>(n)]) continue;
      out[static_cast<std::size_t>(n)] = 1;
      stack.push_back(n);
    }
  }
  for (std::size_t s = 0; s < tris_.size(); ++s)
    if (tris_[s].alive && out[s]) kill(static_cast<int>(s));
  for (auto& T : tris_) {
    if (!T.alive) continue;
    for (int i = 0; i < 3; ++i)
      if (T.nb[i] != kNone && !tri(T.nb[i]).alive) T.nb[i] = kNone;
    for (int v : T.v) vtri_[static_cast<std::size_t>(v)] = static_cast<int>(&T - tris_.data());
  }
  for (std::size_t s = 0; s < tris_.size(); ++s)
    if (tris_[s].alive) {
      hint_ = static_cast<int>(s);
      break;
    }
}

void Cdt::split_segment(int t, int i) {
  const Tri& T = tri(t);
  const Vec2 a = pt(T.v[(i + 1) % 3]), b = pt(T.v[(i + 2) % 3]);
  insert_point(0.5 * (a + b), t, i);
}

void Cdt::refine(const TriSizeFn& size) {
  const double min_angle = opts_.min_angle_deg * std::numbers::pi / 180.0;
  // Badness > 0 marks a triangle for refinement; oversized triangles rank by
  // their size ratio, poorly shaped ones below them.
  auto badness = [&](const Tri& T) {
    const Vec2 a = pt(T.v[0]), b = pt(T.v[1]), c = pt(T.v[2]);
    const double la = dist(b, c), lb = dist(c, a), lc = dist(a, b);
    const double lmax = std::max({la, lb, lc}), lmin = std::min({la, lb, lc});
    const double h = size((1.0 / 3.0) * (a + b + c));
    if (lmax > h) return lmax / h;
    if (lmin < 0.25 * h) return 0.0;
    // Smallest angle is opposite the shortest edge.
    const double area2 = std::abs(orient(a, b, c));
    const double sin_min = area2 / (std::max({la * lb, lb * lc, lc * la}));
    return sin_min < std::sin(min_angle) ? 1.0 - sin_min : 0.0;
  };
  struct Entry {
    double key;
    int t;
    std::array<int, 3> v;
    bool operator<(const Entry& o) const { return key < o.key || (key == o.key && t > o.t); }
  };
  std::priority_queue<Entry> queue;
  auto push = [&](int t) {
    const double b = badness(tri(t));
    if (b > 0.0) queue.push({b, t, tri(t).v});
  };
  for (std::size_t s = 0; s < tris_.size(); ++s)
    if (tris_[s].alive) push(static_cast<int>(s));

  std::size_t work = 0;
  const std::size_t max_work = 40 * opts_.max_triangles;
  std::vector<int> cavity;
  std::vector<BEdge> boundary;
  while (!queue.empty()) {
    if (alive_count_ > opts_.max_triangles)
      throw MeshingError("triangle budget exceeded (" + std::to_string(opts_.max_triangles) +
                         "); sizing field too fine");
    if (++work > max_work) throw MeshingError("refinement did not terminate");
    const auto [key, t, verts] = queue.top();
    queue.pop();
    if (!tri(t).alive || tri(t).v != verts) continue;

    const Tri& T = tri(t);
    const Vec2 c = circumcenter(pt(T.v[0]), pt(T.v[1]), pt(T.v[2]));
    const auto w = walk(t, c, true);
    bool inserted = false;
    if (w.blocked >= 0) {
      const Tri& B = tri(w.tri);
      if (dist(pt(B.v[(w.blocked + 1) % 3]), pt(B.v[(w.blocked + 2) % 3])) > 1e-7) {
        split_segment(w.tri, w.blocked);
        inserted = true;
      }
    } else if (w.blocked == -1) {
      if (collect_cavity(c, w.tri, -1, cavity, boundary)) {
        std::vector<std::pair<int, int>> encroached;
        for (const auto& e : boundary) {
          if (e.seg < 0) continue;
          if (dot(pt(e.a) - c, pt(e.b) - c) < 0.0) encroached.emplace_back(e.a, e.b);
        }
        if (encroached.empty()) {
          inserted = insert_point(c, w.tri) != kNone;
        } else {
          for (auto [ea, eb] : encroached) {
            auto [st, se] = find_edge(ea, eb);
            if (st != kNone && tri(st).seg[se] >= 0 && dist(pt(ea), pt(eb)) > 1e-7) {
              split_segment(st, se);
              inserted = true;
            }
          }
        }
      }
    }
    if (!inserted) continue;
    // Re-examine everything touched by the insertion.
    // New triangles are those incident to the newest vertices; walk the fans.
    const int last = static_cast<int>(pts_.size()) - 1;
    for (int v = last; v >= 0 && v >= last - 2; --v) {
      const int start = vtri_[static_cast<std::size_t>(v)];
      if (start == kNone || !tri(start).alive || index_of(tri(start), v) < 0) continue;
      for (int dir = 0; dir < 2; ++dir) {
        int cur = start;
        for (int guard = 0; guard < 256 && cur != kNone; ++guard) {
          push(cur);
          const int iv = index_of(tri(cur), v);
          cur = tri(cur).nb[dir == 0 ? (iv + 2) % 3 : (iv + 1) % 3];
          if (cur == start) break;
        }
      }
    }
    if (tri(t).alive && tri(t).v == verts) push(t);
  }
}

TriangleMesh Cdt::extract() const {
  TriangleMesh out;
  std::vector<int> remap(pts_.size(), -1);
  for (const auto& T : tris_) {
    if (!T.alive) continue;
    std::array<int, 3> v{};
    for (int i = 0; i < 3; ++i) {
      int& r = remap[static_cast<std::size_t>(T.v[i])];
      if (r < 0) {
        r = static_cast<int>(out.vertices.size());
        out.vertices.push_back(pt(T.v[i]));
      }
      v[i] = r;
    }
    out.triangles.push_back(v);
    for (int i = 0; i < 3; ++i) {
      if (T.seg[i] < 0 || T.nb[i] != kNone) continue;
      out.boundary.push_back({v[(i + 1) % 3], v[(i + 2) % 3], segments_[static_cast<std::size_t>(T.seg[i])].tag});
    }
  }
  return out;
}

TriangleMesh Cdt::build(const DomainSpec& domain, const TriSizeFn& size) {
  // Boundary loops, pre-split so no subsegment exceeds the local size.
  struct LoopEdge {
    int a, b, marker;
  };
  std::vector<LoopEdge> constraints;
  auto add_loop = [&](const Polygon& poly, bool outer) {
    const std::size_t n = poly.size();
    std::vector<int> ids;
    std::vector<int> markers;
    for (std::size_t e = 0; e < n; ++e) {
      const Vec2 a = poly.vertex(e), b = poly.vertex(e + 1);
      BoundaryTag tag = outer ? BoundaryTag::free : BoundaryTag::hole;
      if (outer && static_cast<int>(e) == domain.dirichlet_edge) tag = BoundaryTag::dirichlet;
      if (outer && static_cast<int>(e) == domain.neumann_edge) tag = BoundaryTag::neumann;
      const int marker = static_cast<int>(segments_.size());
      segments_.push_back({b - a, tag});
      double hmin = size(a);
      for (int k = 1; k <= 8; ++k) hmin = std::min(hmin, size(a + (k / 8.0) * (b - a)));
      const int pieces = std::max(1, static_cast<int>(std::ceil(dist(a, b) / hmin - 1e-9)));
      for (int k = 0; k < pieces; ++k) {
        const Vec2 p = k == 0 ? a : a + (static_cast<double>(k) / pieces) * (b - a);
        const auto w = walk(hint_, p, false);
        const Tri& T = tri(w.tri);
        int existing = -1;
        for (int v : T.v)
          if (dist(pt(v), p) < 1e-14) existing = v;
        int id = existing;
        if (id < 0) id = insert_point(p, w.tri);
        if (id < 0) throw MeshingError("failed to insert boundary vertex");
        ids.push_back(id);
        markers.push_back(marker);
      }
    }
    for (std::size_t k = 0; k < ids.size(); ++k)
      constraints.push_back({ids[k], ids[(k + 1) % ids.size()], markers[k]});
  };
  add_loop(domain.outer(), true);
  for (const auto& h : domain.holes()) add_loop(h, false);
  for (const auto& c : constraints) insert_segment(c.a, c.b, c.marker);
  make_delaunay();
  remove_exterior();

  double area = 0.0;
  for (const auto& T : tris_)
    if (T.alive) area += 0.5 * orient(pt(T.v[0]), pt(T.v[1]), pt(T.v[2]));
  double expected = domain.outer().area();
  for (const auto& h : domain.holes()) expected -= h.area();
  if (std::abs(area - expected) > 1e-9 * std::max(1.0, expected))
    throw MeshingError("boundary recovery failed (area mismatch)");

  refine(size);
  return extract();
}

}  // namespace

TriangleMesh triangulate_with(const DomainSpec& domain, const TriSizeFn& size, const MeshingOptions& opts) {
  if (auto err = validate_geometry(domain.geom); !err.empty()) throw MeshingError("invalid domain: " + err);
  Cdt cdt(opts);
  return cdt.build(domain, size);
}

TriangleMesh triangulate(const DomainSpec& domain, const SizingField& field, const MeshingOptions& opts) {
  return triangulate_with(domain, [&field](Vec2 p) { return field(p); }, opts);
}

}  // namespace meshdens
