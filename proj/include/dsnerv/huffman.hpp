#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include "dsnerv/bytes.hpp"
#include "dsnerv/common.hpp"

namespace dsnerv {

// ---------------------------------------------------------------------------
// MSB-first bit IO.
// ---------------------------------------------------------------------------

class BitWriter {
 public:
  void put(uint32_t code, int len) {
    for (int i = len - 1; i >= 0; --i) {
      acc_ = static_cast<uint8_t>((acc_ << 1) | ((code >> i) & 1u));
      if (++nbits_ == 8) {
        buf_.push_back(acc_);
        acc_ = 0;
        nbits_ = 0;
      }
    }
  }

  // Pads the final byte with zero bits.
  std::vector<uint8_t> finish() {
    if (nbits_ > 0) {
      buf_.push_back(static_cast<uint8_t>(acc_ << (8 - nbits_)));
      acc_ = 0;
      nbits_ = 0;
    }
    return std::move(buf_);
  }

 private:
  std::vector<uint8_t> buf_;
  uint8_t acc_ = 0;
  int nbits_ = 0;
};

class BitReader {
 public:
  BitReader(const uint8_t* data, size_t len) : data_(data), nbits_(len * 8) {}

  uint32_t bit() {
    if (pos_ >= nbits_) throw CorruptStream("bit stream exhausted");
    const uint32_t b = (data_[pos_ >> 3] >> (7 - (pos_ & 7))) & 1u;
    ++pos_;
    return b;
  }

 private:
  const uint8_t* data_;
  size_t nbits_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Canonical Huffman codec over uint16 symbols. Only (symbol, length) pairs
// are serialized; codes are reassigned canonically on both sides.
// ---------------------------------------------------------------------------

class HuffmanCodec {
 public:
  struct Entry {
    uint16_t symbol = 0;
    uint8_t length = 0;
    uint32_t code = 0;
  };

  static constexpr int kMaxLength = 32;

  static HuffmanCodec from_symbols(const std::vector<uint16_t>& symbols) {
    std::vector<uint64_t> freq(65536, 0);
    for (uint16_t s : symbols) ++freq[s];
    return from_frequencies(freq);
  }

  // freq is indexed by symbol; zero-frequency symbols get no code.
  static HuffmanCodec from_frequencies(std::vector<uint64_t> freq) {
    HuffmanCodec c;
    for (;;) {
      std::vector<uint8_t> lengths = tree_lengths(freq);
      uint8_t max_len = 0;
      for (uint8_t l : lengths) max_len = std::max(max_len, l);
      if (max_len <= kMaxLength) {
        for (size_t s = 0; s < lengths.size(); ++s)
          if (lengths[s] > 0)
            c.entries_.push_back({static_cast<uint16_t>(s), lengths[s], 0});
        break;
      }
      // flatten the distribution and retry: halving (rounded up) keeps every
      // present symbol present and strictly reduces total weight
      for (auto& f : freq)
        if (f > 0) f = (f + 1) / 2;
    }
    c.finalize();
    return c;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<uint8_t> encode(const std::vector<uint16_t>& symbols) const {
    BitWriter bw;
    for (uint16_t s : symbols) {
      const int32_t idx = lookup_[s];
      if (idx < 0) throw CorruptStream("symbol " + std::to_string(s) + " has no code");
      const Entry& e = entries_[static_cast<size_t>(idx)];
      bw.put(e.code, e.length);
    }
    return bw.finish();
  }

  std::vector<uint16_t> decode(const uint8_t* data, size_t len, size_t count) const {
    std::vector<uint16_t> out;
    out.reserve(count);
    BitReader br(data, len);
    for (size_t i = 0; i < count; ++i) {
      uint32_t acc = 0;
      int l = 0;
      for (;;) {
        acc = (acc << 1) | br.bit();
        ++l;
        if (l > kMaxLength) throw CorruptStream("malformed huffman payload");
        const auto& lv = levels_[static_cast<size_t>(l)];
        if (lv.count > 0 && acc >= lv.first_code && acc < lv.first_code + lv.count) {
          out.push_back(entries_[lv.first_index + (acc - lv.first_code)].symbol);
          break;
        }
      }
    }
    return out;
  }

  // table = u32 entry count, then (u16 symbol, u8 length) in canonical order.
  void write_table(ByteWriter& bw) const {
    bw.u32(static_cast<uint32_t>(entries_.size()));
    for (const Entry& e : entries_) {
      bw.u16(e.symbol);
      bw.u8(e.length);
    }
  }

  static HuffmanCodec read_table(ByteReader& br) {
    const uint32_t n = br.u32();
    if (n > 65536) throw CorruptStream("huffman table has " + std::to_string(n) + " entries");
    HuffmanCodec c;
    c.entries_.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
      Entry e;
      e.symbol = br.u16();
      e.length = br.u8();
      if (e.length < 1 || e.length > kMaxLength)
        throw CorruptStream("huffman code length " + std::to_string(e.length));
      if (i > 0) {
        const Entry& p = c.entries_.back();
        if (e.length < p.length || (e.length == p.length && e.symbol <= p.symbol))
          throw CorruptStream("huffman table not in canonical order");
      }
      c.entries_.push_back(e);
    }
    uint64_t kraft = 0;  // in units of 2^-kMaxLength
    for (const Entry& e : c.entries_) kraft += 1ull << (kMaxLength - e.length);
    if (kraft > (1ull << kMaxLength)) throw CorruptStream("huffman table overfull");
    c.finalize();
    return c;
  }

 private:
  // Standard heap-built Huffman tree; deterministic tie-breaking by node
  // creation order (leaves in symbol order, then merge order).
  static std::vector<uint8_t> tree_lengths(const std::vector<uint64_t>& freq) {
    struct Node {
      uint64_t weight;
      int left, right;  // -1 for leaves
      int depth_target;
    };
    std::vector<Node> nodes;
    std::vector<int> symbol_node(freq.size(), -1);
    using Item = std::pair<uint64_t, int>;  // (weight, node index)
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
    for (size_t s = 0; s < freq.size(); ++s)
      if (freq[s] > 0) {
        symbol_node[s] = static_cast<int>(nodes.size());
        nodes.push_back({freq[s], -1, -1, 0});
        heap.emplace(freq[s], symbol_node[s]);
      }
    std::vector<uint8_t> lengths(freq.size(), 0);
    if (nodes.empty()) return lengths;
    if (nodes.size() == 1) {
      for (size_t s = 0; s < freq.size(); ++s)
        if (freq[s] > 0) lengths[s] = 1;
      return lengths;
    }
    while (heap.size() > 1) {
      const auto [wa, a] = heap.top();
      heap.pop();
      const auto [wb, b] = heap.top();
      heap.pop();
      const int id = static_cast<int>(nodes.size());
      nodes.push_back({wa + wb, a, b, 0});
      heap.emplace(wa + wb, id);
    }
    // depths by walking down from the root
    const int root = static_cast<int>(nodes.size()) - 1;
    std::vector<std::pair<int, int>> stack{{root, 0}};
    std::vector<int> depth(nodes.size(), 0);
    while (!stack.empty()) {
      const auto [id, d] = stack.back();
      stack.pop_back();
      depth[static_cast<size_t>(id)] = d;
      if (nodes[static_cast<size_t>(id)].left >= 0) {
        stack.emplace_back(nodes[static_cast<size_t>(id)].left, d + 1);
        stack.emplace_back(nodes[static_cast<size_t>(id)].right, d + 1);
      }
    }
    for (size_t s = 0; s < freq.size(); ++s)
      if (symbol_node[s] >= 0)
        lengths[s] = static_cast<uint8_t>(depth[static_cast<size_t>(symbol_node[s])]);
    return lengths;
  }

  void finalize() {
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
      return a.length != b.length ? a.length < b.length : a.symbol < b.symbol;
    });
    uint32_t code = 0;
    for (size_t i = 0; i < entries_.size(); ++i) {
      if (i > 0) code = (code + 1) << (entries_[i].length - entries_[i - 1].length);
      entries_[i].code = code;
    }
    lookup_.assign(65536, -1);
    for (size_t i = 0; i < entries_.size(); ++i) lookup_[entries_[i].symbol] = static_cast<int32_t>(i);
    levels_.assign(kMaxLength + 1, {});
    for (size_t i = 0; i < entries_.size(); ++i) {
      Level& lv = levels_[entries_[i].length];
      if (lv.count == 0) {
        lv.first_code = entries_[i].code;
        lv.first_index = static_cast<uint32_t>(i);
      }
      ++lv.count;
    }
  }

  struct Level {
    uint32_t first_code = 0;
    uint32_t first_index = 0;
    uint32_t count = 0;
  };

  std::vector<Entry> entries_;
  std::vector<int32_t> lookup_;
  std::vector<Level> levels_;
};

// Standalone symbol-stream codec: table | u32 count | u32 payload bytes |
// payload.
inline std::vector<uint8_t> entropy_encode(const std::vector<uint16_t>& symbols) {
  const HuffmanCodec codec = HuffmanCodec::from_symbols(symbols);
  const std::vector<uint8_t> payload = codec.encode(symbols);
  ByteWriter bw;
  codec.write_table(bw);
  bw.u32(static_cast<uint32_t>(symbols.size()));
  bw.u32(static_cast<uint32_t>(payload.size()));
  bw.bytes(payload.data(), payload.size());
  return bw.take();
}

inline std::vector<uint16_t> entropy_decode(const std::vector<uint8_t>& blob) {
  ByteReader br(blob);
  const HuffmanCodec codec = HuffmanCodec::read_table(br);
  const uint32_t count = br.u32();
  const uint32_t payload_len = br.u32();
  if (payload_len > br.remaining()) throw CorruptStream("entropy payload truncated");
  std::vector<uint8_t> payload(payload_len);
  br.bytes(payload.data(), payload_len);
  br.expect_end();
  return codec.decode(payload.data(), payload.size(), count);
}

}  // namespace dsnerv
