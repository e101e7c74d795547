#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "easr/checkpoint.hpp"
#include "easr/inventory.hpp"
#include "easr/rng.hpp"
#include "easr/tensor.hpp"

namespace easr {

// One reference transcription. `ids` is `text` encoded against the owning
// corpus inventory; bodies never contain <sos>/<eos>/<blank>.
struct Transcript {
  std::string id;
  std::string text;
  std::vector<int> ids;
};

struct Utterance {
  std::string id;
  Tensor features;  // T frames x D dims
  Transcript transcript;
};

struct TranscriptCorpus {
  GraphemeInventory inventory;
  std::vector<Transcript> items;
};

// Reads `<utt_id>\t<text>` lines, builds the inventory from the texts and
// encodes every transcript against it.
inline TranscriptCorpus load_transcripts(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError("cannot open " + path);
  std::vector<std::string> ids;
  std::vector<std::string> texts;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw CorpusError(path + ":" + std::to_string(lineno) +
                        ": missing tab between id and text");
    }
    std::string id = line.substr(0, tab);
    std::string text = line.substr(tab + 1);
    if (id.empty()) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": empty id");
    }
    if (text.empty()) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": empty text");
    }
    if (!seen.insert(id).second) {
      throw CorpusError(path + ":" + std::to_string(lineno) +
                        ": duplicate utterance id '" + id + "'");
    }
    ids.push_back(std::move(id));
    texts.push_back(std::move(text));
  }
  TranscriptCorpus corpus;
  corpus.inventory = GraphemeInventory::from_texts(texts);
  corpus.items.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    corpus.items.push_back(Transcript{std::move(ids[i]), texts[i],
                                      corpus.inventory.encode(texts[i])});
  }
  return corpus;
}

inline void save_transcripts(const std::string& path,
                             const TranscriptCorpus& corpus) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CorpusError("cannot open " + path + " for writing");
  for (const auto& t : corpus.items) {
    os << t.id << '\t' << t.text << '\n';
  }
  if (!os) throw CorpusError("write failed for " + path);
}

// Per-grapheme-type counts over transcript bodies (space included,
// <sos>/<eos>/<blank> never occur there). Summary statistics are over types
// with nonzero count; mean = total / nonzero types.
struct FrequencyStats {
  std::vector<std::int64_t> counts;  // indexed by inventory id
  std::int64_t total = 0;
  int nonzero_types = 0;
  std::int64_t min = 0;
  std::int64_t max = 0;
  double mean = 0.0;
  double median = 0.0;
};

inline FrequencyStats char_frequencies(const TranscriptCorpus& corpus) {
  if (corpus.items.empty()) {
    throw CorpusError("char_frequencies: empty transcript set");
  }
  FrequencyStats s;
  s.counts.assign(static_cast<std::size_t>(corpus.inventory.size()), 0);
  for (const auto& t : corpus.items) {
    for (int id : t.ids) {
      ++s.counts[static_cast<std::size_t>(id)];
      ++s.total;
    }
  }
  std::vector<std::int64_t> nonzero;
  for (auto c : s.counts) {
    if (c > 0) nonzero.push_back(c);
  }
  s.nonzero_types = static_cast<int>(nonzero.size());
  if (nonzero.empty()) {
    throw CorpusError("char_frequencies: no grapheme occurrences");
  }
  std::sort(nonzero.begin(), nonzero.end());
  s.min = nonzero.front();
  s.max = nonzero.back();
  s.mean = static_cast<double>(s.total) / static_cast<double>(nonzero.size());
  const std::size_t n = nonzero.size();
  s.median = n % 2 == 1 ? static_cast<double>(nonzero[n / 2])
                        : 0.5 * static_cast<double>(nonzero[n / 2 - 1] +
                                                    nonzero[n / 2]);
  return s;
}

// Oversampling: a grapheme is rare when its frequency is below the corpus
// mean. Every sentence containing at least one rare grapheme appears
//   n_s = max over rare c in s of ceil(mean / f(c))
// times in total (original plus copies); other sentences appear once.
// Copies keep the sentence text and get "#<k>" id suffixes. This guarantees
// post-balance min frequency >= pre-balance mean: each occurrence of rare c
// is multiplied by at least ceil(mean / f(c)).
inline TranscriptCorpus oversample(const TranscriptCorpus& corpus,
                                   const FrequencyStats& stats) {
  TranscriptCorpus out;
  out.inventory = corpus.inventory;
  for (const auto& t : corpus.items) {
    std::int64_t copies = 1;
    for (int id : t.ids) {
      const std::int64_t f = stats.counts[static_cast<std::size_t>(id)];
      if (static_cast<double>(f) < stats.mean) {
        const std::int64_t need = static_cast<std::int64_t>(
            std::ceil(stats.mean / static_cast<double>(f)));
        copies = std::max(copies, need);
      }
    }
    out.items.push_back(t);
    for (std::int64_t k = 1; k < copies; ++k) {
      Transcript dup = t;
      dup.id = t.id + "#" + std::to_string(k);
      out.items.push_back(std::move(dup));
    }
  }
  return out;
}

// Strips an oversampling copy suffix, giving the id of the utterance whose
// features the copy shares.
inline std::string base_utterance_id(const std::string& id) {
  const auto hash = id.rfind('#');
  if (hash == std::string::npos || hash == 0) return id;
  for (std::size_t i = hash + 1; i < id.size(); ++i) {
    if (id[i] < '0' || id[i] > '9') return id;
  }
  return hash + 1 < id.size() ? id.substr(0, hash) : id;
}

// ---------------------------------------------------------------------------
// Synthetic corpus: a desk-scale stand-in corpus with a controllable
// grapheme skew. Graphemes are drawn with Zipf-like probabilities
// p(rank) ~ rank^-skew; each grapheme emits kFramesPerGrapheme frames of a
// grapheme-specific 40-dim prototype plus optional Gaussian noise.
// ---------------------------------------------------------------------------

struct SynthConfig {
  int vocab = 12;           // body graphemes, >= 2
  int utterances = 200;
  int min_len = 3;          // graphemes per utterance
  int max_len = 8;
  double skew = 1.0;        // Zipf exponent, >= 0
  double noise = 0.1;       // feature noise std
  std::uint64_t seed = 0;
};

inline constexpr int kSynthFeatureDim = 40;
inline constexpr int kFramesPerGrapheme = 6;

struct SynthCorpus {
  TranscriptCorpus transcripts;
  std::vector<Utterance> utterances;
};

namespace detail {

inline std::string synth_alphabet(int vocab) {
  static const std::string pool =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  if (vocab < 2 || vocab > static_cast<int>(pool.size())) {
    throw CorpusError("synth vocab must be in [2, " +
                      std::to_string(pool.size()) + "], got " +
                      std::to_string(vocab));
  }
  return pool.substr(0, static_cast<std::size_t>(vocab));
}

}  // namespace detail

inline SynthCorpus synthesize_corpus(const SynthConfig& cfg) {
  if (cfg.skew < 0.0) {
    throw CorpusError("synth skew must be >= 0");
  }
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) {
    throw CorpusError("synth length range invalid");
  }
  const std::string alphabet = detail::synth_alphabet(cfg.vocab);

  // Zipf distribution over ranks 1..vocab.
  std::vector<double> cdf(alphabet.size());
  double z = 0.0;
  for (std::size_t r = 0; r < alphabet.size(); ++r) {
    z += std::pow(static_cast<double>(r + 1), -cfg.skew);
    cdf[r] = z;
  }
  for (auto& c : cdf) c /= z;

  Rng root(cfg.seed);
  Rng proto_rng = root.split("prototypes");
  std::vector<Tensor> prototypes;
  prototypes.reserve(alphabet.size());
  for (std::size_t g = 0; g < alphabet.size(); ++g) {
    prototypes.push_back(Tensor::uniform(
        {1, static_cast<std::size_t>(kSynthFeatureDim)}, -1.0, 1.0, proto_rng));
  }

  SynthCorpus out;
  std::vector<std::string> texts;
  Rng text_rng = root.split("text");
  Rng noise_rng = root.split("noise");
  for (int u = 0; u < cfg.utterances; ++u) {
    const int len =
        cfg.min_len +
        static_cast<int>(text_rng.below(
            static_cast<std::uint64_t>(cfg.max_len - cfg.min_len + 1)));
    std::string text;
    std::vector<int> glyphs;
    for (int i = 0; i < len; ++i) {
      const double x = text_rng.uniform();
      const std::size_t g =
          static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), x) -
                                   cdf.begin());
      text += alphabet[std::min(g, alphabet.size() - 1)];
      glyphs.push_back(static_cast<int>(std::min(g, alphabet.size() - 1)));
    }
    std::ostringstream id;
    id << "synth-" << std::setw(6) << std::setfill('0') << u;

    const std::size_t frames =
        static_cast<std::size_t>(len) * kFramesPerGrapheme;
    Tensor feats({frames, static_cast<std::size_t>(kSynthFeatureDim)});
    std::size_t t = 0;
    for (int glyph : glyphs) {
      for (int f = 0; f < kFramesPerGrapheme; ++f, ++t) {
        for (int d = 0; d < kSynthFeatureDim; ++d) {
          double v = prototypes[static_cast<std::size_t>(glyph)].at(
              0, static_cast<std::size_t>(d));
          if (cfg.noise > 0.0) v += cfg.noise * noise_rng.gaussian();
          // Quantize to f32 so EAF1 round trips are bit-exact.
          feats.at(t, static_cast<std::size_t>(d)) =
              static_cast<double>(static_cast<float>(v));
        }
      }
    }
    out.utterances.push_back(Utterance{id.str(), std::move(feats),
                                       Transcript{id.str(), text, {}}});
    texts.push_back(std::move(text));
  }

  out.transcripts.inventory = GraphemeInventory::from_texts(texts);
  for (std::size_t u = 0; u < out.utterances.size(); ++u) {
    Transcript& t = out.utterances[u].transcript;
    t.text = texts[u];
    t.ids = out.transcripts.inventory.encode(t.text);
    out.transcripts.items.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// EAF1 feature container:
//   "EAF1" | utterance count u32 LE | per utterance:
//     id length u16 LE, UTF-8 id, T u32 LE, D u32 LE, T*D f32 LE row-major.
// ---------------------------------------------------------------------------

struct FeatureFile {
  std::vector<std::string> ids;
  std::vector<Tensor> features;
};

inline void save_features(const std::string& path,
                          std::span<const Utterance> utterances) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("EAF1", 4);
  io::write_u32(os, static_cast<std::uint32_t>(utterances.size()));
  for (const auto& u : utterances) {
    io::write_u16(os, static_cast<std::uint16_t>(u.id.size()));
    os.write(u.id.data(), static_cast<std::streamsize>(u.id.size()));
    io::write_u32(os, static_cast<std::uint32_t>(u.features.rows()));
    io::write_u32(os, static_cast<std::uint32_t>(u.features.cols()));
    for (double v : u.features.values()) {
      io::write_f32(os, static_cast<float>(v));
    }
  }
  if (!os) throw IoError("write failed for " + path);
}

inline FeatureFile load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  io::expect_magic(is, "EAF1", path);
  const std::uint32_t count = io::read_u32(is, "utterance count");
  FeatureFile out;
  for (std::uint32_t u = 0; u < count; ++u) {
    const std::uint16_t id_len = io::read_u16(is, "id length");
    std::string id(id_len, '\0');
    if (!is.read(id.data(), id_len)) {
      throw IoError("truncated file while reading utterance id in " + path);
    }
    const std::uint32_t T = io::read_u32(is, "frame count");
    const std::uint32_t D = io::read_u32(is, "feature dim");
    if (T == 0 || D == 0 ||
        static_cast<std::uint64_t>(T) * D > (1ull << 31)) {
      throw IoError(path + ": implausible feature shape " + std::to_string(T) +
                    "x" + std::to_string(D) + " for utterance '" + id + "'");
    }
    Tensor feats({T, D});
    for (auto& v : feats.values()) {
      v = static_cast<double>(io::read_f32(is, "feature values"));
    }
    out.ids.push_back(std::move(id));
    out.features.push_back(std::move(feats));
  }
  return out;
}

// Joins transcripts with features by utterance id. Oversampling copies
// ("id#k") reuse the base utterance's features.
inline std::vector<Utterance> join_corpus(const TranscriptCorpus& transcripts,
                                          const FeatureFile& features) {
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < features.ids.size(); ++i) {
    index.emplace(features.ids[i], i);
  }
  std::vector<Utterance> out;
  out.reserve(transcripts.items.size());
  for (const auto& t : transcripts.items) {
    auto it = index.find(t.id);
    if (it == index.end()) {
      const std::string base = base_utterance_id(t.id);
      it = index.find(base);
      if (it == index.end()) {
        throw CorpusError("no features for utterance '" + t.id + "'");
      }
    }
    out.push_back(Utterance{t.id, features.features[it->second], t});
  }
  return out;
}

// Plain-text frequency table: summary line then per-grapheme counts sorted
// by descending count (ties by inventory order).
inline void write_stats_report(std::ostream& os, const TranscriptCorpus& corpus,
                               const FrequencyStats& stats) {
  os << "grapheme types: " << stats.nonzero_types
     << "  total occurrences: " << stats.total << "\n";
  std::ostringstream line;
  line << "min " << stats.min << "  max " << stats.max << "  mean " << std::fixed
       << std::setprecision(2) << stats.mean << "  median "
       << std::setprecision(1) << stats.median;
  os << line.str() << "\n";
  os << "count\tgrapheme\n";
  std::vector<int> order;
  for (int i = 0; i < corpus.inventory.size(); ++i) {
    if (stats.counts[static_cast<std::size_t>(i)] > 0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return stats.counts[static_cast<std::size_t>(a)] >
           stats.counts[static_cast<std::size_t>(b)];
  });
  for (int id : order) {
    os << stats.counts[static_cast<std::size_t>(id)] << '\t'
       << corpus.inventory.symbol(id) << '\n';
  }
}

}  // namespace easr
