// SPDX-License-Identifier: Apache-2.0
//
// Adapter bookkeeping across clients: joining a client's two halves into a
// full adapter list, data-size weighted averaging of the A and B factors, and
// splitting the averaged list back at each client's cut.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sflora/model.hpp"

namespace sflora {

struct ClientAdapterView {
  std::size_t client_id = 0;
  AdapterSet client_side;  // layers 1..cut
  AdapterSet server_side;  // layers cut+1..N
  std::size_t data_size = 0;
};

inline AdapterSet assemble_full(const ClientAdapterView& view) {
  AdapterSet full;
  full.cut = view.client_side.size();
  full.adapters.reserve(view.client_side.size() + view.server_side.size());
  for (const auto& ad : view.client_side.adapters) full.adapters.push_back(ad);
  for (const auto& ad : view.server_side.adapters) full.adapters.push_back(ad);
  for (std::size_t i = 0; i < full.adapters.size(); ++i) {
    if (full.adapters[i].layer != i + 1) {
      throw std::invalid_argument("assemble_full: client " + std::to_string(view.client_id) +
                                  " has a gap or overlap at layer " + std::to_string(i + 1));
    }
  }
  return full;
}

inline std::pair<AdapterSet, AdapterSet> split_adapters(const AdapterSet& full, std::size_t cut) {
  if (cut > full.size()) {
    throw std::out_of_range("split_adapters: cut " + std::to_string(cut) + " exceeds " +
                            std::to_string(full.size()) + " layers");
  }
  AdapterSet client_side;
  AdapterSet server_side;
  client_side.cut = server_side.cut = cut;
  client_side.adapters.assign(full.adapters.begin(), full.adapters.begin() + static_cast<std::ptrdiff_t>(cut));
  server_side.adapters.assign(full.adapters.begin() + static_cast<std::ptrdiff_t>(cut), full.adapters.end());
  return {std::move(client_side), std::move(server_side)};
}

// Per-client weight |D_u| / |D|, in the order of `views`.
struct AggregationWeights {
  std::vector<double> weights;
};

inline AggregationWeights aggregation_weights(std::span<const ClientAdapterView> views) {
  double total = 0.0;
  for (const auto& v : views) total += static_cast<double>(v.data_size);
  if (total <= 0.0) throw std::invalid_argument("aggregate: total data size is zero");
  AggregationWeights w;
  w.weights.reserve(views.size());
  for (const auto& v : views) w.weights.push_back(static_cast<double>(v.data_size) / total);
  return w;
}

// A and B are averaged separately per layer. Sums run in ascending client_id
// so the result does not depend on the order of `views`.
inline AdapterSet aggregate(std::span<const ClientAdapterView> views) {
  if (views.empty()) throw std::invalid_argument("aggregate: no clients");
  const AggregationWeights w = aggregation_weights(views);

  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return views[x].client_id < views[y].client_id; });

  std::vector<AdapterSet> fulls;
  fulls.reserve(views.size());
  for (const auto& v : views) fulls.push_back(assemble_full(v));

  const AdapterSet& ref = fulls[order.front()];
  AdapterSet out;
  out.cut = 0;
  out.adapters.reserve(ref.size());
  for (const auto& ad : ref.adapters) {
    out.adapters.push_back({ad.layer, Matrix(ad.a.rows(), ad.a.cols()), Matrix(ad.b.rows(), ad.b.cols())});
  }
  for (std::size_t idx : order) {
    const AdapterSet& f = fulls[idx];
    if (f.size() != ref.size()) throw std::invalid_argument("aggregate: clients disagree on layer count");
    for (std::size_t l = 0; l < f.size(); ++l) {
      const LoraAdapter& src = f.adapters[l];
      LoraAdapter& dst = out.adapters[l];
      if (!src.a.same_shape(dst.a) || !src.b.same_shape(dst.b)) {
        throw std::invalid_argument("aggregate: adapter shape mismatch at layer " + std::to_string(src.layer));
      }
      axpy(w.weights[idx], src.a, dst.a);
      axpy(w.weights[idx], src.b, dst.b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian, version 1):
//
//   offset  size  field
//   0       4     magic "SFLA"
//   4       4     u32 version = 1
//   8       4     u32 adapter count N
//   12      4     u32 hidden dim m
//   16      4     u32 rank r
//   20      4     u32 cut
//   24      ...   N records, ascending layer:
//                   u32 layer index (1-based)
//                   r*m f64  A, row-major
//                   m*r f64  B, row-major
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated header");
  return v;
}

inline void put_matrix(std::ostream& os, const Matrix& m) {
  auto v = m.values();
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void get_matrix(std::istream& is, Matrix& m) {
  auto v = m.values();
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
    throw std::runtime_error("checkpoint: truncated payload");
  }
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'L', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const AdapterSet& set) {
  require_contiguous(set, "write_checkpoint");
  const std::size_t m = set.empty() ? 0 : set.adapters.front().a.cols();
  const std::size_t r = set.empty() ? 0 : set.adapters.front().a.rows();
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(set.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(m));
  detail::put_u32(os, static_cast<std::uint32_t>(r));
  detail::put_u32(os, static_cast<std::uint32_t>(set.cut));
  for (const auto& ad : set.adapters) {
    require_shape(ad.a, r, m, "write_checkpoint A");
    require_shape(ad.b, m, r, "write_checkpoint B");
    detail::put_u32(os, static_cast<std::uint32_t>(ad.layer));
    detail::put_matrix(os, ad.a);
    detail::put_matrix(os, ad.b);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline AdapterSet read_checkpoint(std::istream& is) {
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  if (detail::get_u32(is) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
  const std::size_t n = detail::get_u32(is);
  const std::size_t m = detail::get_u32(is);
  const std::size_t r = detail::get_u32(is);
  AdapterSet set;
  set.cut = detail::get_u32(is);
  set.adapters.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LoraAdapter ad{detail::get_u32(is), Matrix(r, m), Matrix(m, r)};
    detail::get_matrix(is, ad.a);
    detail::get_matrix(is, ad.b);
    set.adapters.push_back(std::move(ad));
  }
  require_contiguous(set, "read_checkpoint");
  return set;
}

inline void save_checkpoint(const std::string& path, const AdapterSet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  write_checkpoint(os, set);
}

inline AdapterSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace sflora
