#include "kpg/synthetic.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <string_view>

namespace kpg {

namespace {

struct Topic {
  std::string_view name;
  std::array<std::string_view, 6> terms;
  std::array<std::string_view, 8> words;
};

constexpr std::array<Topic, 12> kTopics{{
    {"information retrieval",
     {"query expansion", "document ranking", "relevance feedback", "inverted index", "search engine", "click model"},
     {"queries", "users", "ranking", "documents", "collection", "terms", "snippets", "web"}},
    {"machine translation",
     {"neural decoder", "attention mechanism", "parallel corpus", "beam search", "word alignment", "language pair"},
     {"sentences", "source", "target", "bilingual", "translations", "languages", "fluency", "vocabulary"}},
    {"computer vision",
     {"object detection", "image segmentation", "convolutional network", "feature map", "bounding box",
      "pose estimation"},
     {"images", "pixels", "scenes", "objects", "camera", "visual", "regions", "frames"}},
    {"wireless communication",
     {"power control", "channel estimation", "interference management", "resource allocation", "base station",
      "spectrum sharing"},
     {"antennas", "signals", "throughput", "fading", "transmitters", "receivers", "bandwidth", "links"}},
    {"database systems",
     {"query optimization", "transaction processing", "index structure", "join algorithm", "storage engine",
      "concurrency control"},
     {"tables", "records", "workloads", "disk", "tuples", "schemas", "latency", "logs"}},
    {"computer security",
     {"intrusion detection", "malware analysis", "access control", "threat model", "side channel",
      "encryption scheme"},
     {"attacks", "attackers", "privacy", "vulnerabilities", "keys", "packets", "defenses", "exploits"}},
    {"robotics",
     {"motion planning", "path tracking", "robot arm", "sensor fusion", "legged locomotion", "grasp planning"},
     {"robots", "joints", "trajectories", "sensors", "actuators", "obstacles", "controllers", "manipulators"}},
    {"speech processing",
     {"acoustic model", "speaker recognition", "speech synthesis", "noise reduction", "phoneme recognition",
      "voice activity"},
     {"audio", "utterances", "speakers", "spectrograms", "waveforms", "recordings", "transcripts", "pitch"}},
    {"social media",
     {"community detection", "influence maximization", "link prediction", "user behavior", "information diffusion",
      "graph embedding"},
     {"followers", "posts", "communities", "nodes", "edges", "platforms", "friendships", "cascades"}},
    {"software engineering",
     {"code review", "bug localization", "test generation", "program repair", "static analysis", "version control"},
     {"developers", "bugs", "programs", "commits", "repositories", "patches", "modules", "compilers"}},
    {"distributed computing",
     {"load balancing", "fault tolerance", "consensus protocol", "task scheduling", "data replication",
      "cloud platform"},
     {"servers", "clusters", "replicas", "failures", "messages", "machines", "jobs", "datacenters"}},
    {"computational biology",
     {"gene expression", "protein structure", "sequence alignment", "variant calling", "cell clustering",
      "drug discovery"},
     {"genes", "proteins", "cells", "genomes", "mutations", "tissues", "molecules", "samples"}},
}};

constexpr std::array<std::string_view, 16> kAdjectives{
    "novel", "efficient", "robust", "scalable", "simple", "accurate", "practical", "general",
    "fast", "adaptive", "principled", "unified", "lightweight", "effective", "flexible", "new"};

constexpr std::array<std::string_view, 12> kGeneric{
    "performance", "accuracy", "data", "experiments", "benchmarks", "baselines",
    "settings", "applications", "costs", "results", "tasks", "models"};

// Sentence frames: K = a term, W = a topic word, A = an adjective,
// G = a generic noun. Frames without K carry no keyphrase.
constexpr std::array<std::string_view, 8> kTermFrames{
    "we propose a A K method for W and W",
    "the K of W is A and A",
    "experiments on W show that K improves G",
    "this paper studies W with K",
    "K reduces the G of A W",
    "our A approach to K handles W in practice",
    "we combine K with W to obtain A G",
    "a A K framework is evaluated on W",
};
constexpr std::array<std::string_view, 6> kPlainFrames{
    "results show A G on W",
    "existing methods for W ignore the G of W",
    "we evaluate W on several G",
    "the proposed method is A and A",
    "these W are common in G",
    "our analysis of W reveals A G",
};
constexpr std::array<std::string_view, 4> kTitleFrames{
    "K for W",
    "a A approach to K",
    "towards A K with W",
    "K in A W",
};

template <typename Seq>
std::string_view pick(const Seq& s, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, s.size() - 1);
  return s[d(rng)];
}

std::string fill(std::string_view frame, const Topic& t, std::string_view term, Rng& rng) {
  std::string out;
  std::size_t pos = 0;
  while (pos <= frame.size()) {
    auto next = frame.find(' ', pos);
    if (next == std::string_view::npos) next = frame.size();
    const auto tok = frame.substr(pos, next - pos);
    std::string_view word = tok;
    if (tok == "K") word = term;
    else if (tok == "W") word = pick(t.words, rng);
    else if (tok == "A") word = pick(kAdjectives, rng);
    else if (tok == "G") word = pick(kGeneric, rng);
    if (!out.empty()) out.push_back(' ');
    out += word;
    pos = next + 1;
  }
  return out;
}

}  // namespace

std::size_t synthetic_topic_count() { return kTopics.size(); }

std::vector<Document> synthetic_corpus(std::size_t documents, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Document> out;
  for (std::size_t n = 0; n < documents; ++n) {
    const Topic& t = kTopics[std::uniform_int_distribution<std::size_t>(0, kTopics.size() - 1)(rng)];
    std::array<std::size_t, 6> idx{0, 1, 2, 3, 4, 5};
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t count = std::uniform_int_distribution<std::size_t>(2, 3)(rng);

    std::vector<std::string_view> terms;
    for (std::size_t i = 0; i < count; ++i) terms.push_back(t.terms[idx[i]]);

    Document doc;
    doc.id = "syn-" + std::to_string(n);
    doc.title = fill(pick(kTitleFrames, rng), t, terms[0], rng);

    // Each term gets one body sentence; plain sentences are interleaved.
    std::vector<std::string> sentences;
    for (auto term : terms) sentences.push_back(fill(pick(kTermFrames, rng), t, term, rng));
    const std::size_t plain = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    for (std::size_t i = 0; i < plain; ++i) sentences.push_back(fill(pick(kPlainFrames, rng), t, "", rng));
    std::shuffle(sentences.begin(), sentences.end(), rng);
    for (const auto& s : sentences) doc.body += (doc.body.empty() ? "" : " ") + s + " .";

    for (auto term : terms) doc.keyphrases.emplace_back(term);
    std::shuffle(doc.keyphrases.begin(), doc.keyphrases.end(), rng);
    doc.keyphrases.emplace_back(t.name);
    out.push_back(std::move(doc));
  }
  return out;
}

std::vector<std::string> synthetic_sentences(std::size_t sentences, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  std::bernoulli_distribution with_term(0.6);
  for (std::size_t n = 0; n < sentences; ++n) {
    const Topic& t = kTopics[std::uniform_int_distribution<std::size_t>(0, kTopics.size() - 1)(rng)];
    if (with_term(rng)) out.push_back(fill(pick(kTermFrames, rng), t, pick(t.terms, rng), rng));
    else out.push_back(fill(pick(kPlainFrames, rng), t, "", rng));
  }
  return out;
}

}  // namespace kpg
