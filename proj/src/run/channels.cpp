#include "channels.hpp"

#include <chrono>

#include "../compute/ops.hpp"

namespace fraglow::run {

void ChannelHub::push(uint32_t stream, uint32_t tag, Tensor t) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        boxes_[{stream, tag}].push(std::move(t));
    }
    cv_.notify_all();
}

Tensor ChannelHub::pop(uint32_t stream, uint32_t tag, int64_t timeout_ms) {
    std::unique_lock<std::mutex> lk(mu_);
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    auto key = std::make_pair(stream, tag);
    while (true) {
        auto it = boxes_.find(key);
        if (it != boxes_.end() && !it->second.empty()) {
            Tensor t = std::move(it->second.front());
            it->second.pop();
            if (it->second.empty()) boxes_.erase(it);
            return t;
        }
        // Tags are consumed in order per stream; a waiting entry with a
        // lower tag means the peers' schedules have skewed.
        auto stale = boxes_.lower_bound({stream, 0});
        if (stale != boxes_.end() && stale->first.first == stream && stale->first.second < tag)
            fail(Errc::TagMismatch, "stream " + std::to_string(stream) + " holds stale tag " +
                                        std::to_string(stale->first.second) + " while waiting for " +
                                        std::to_string(tag));
        if (closed_) fail(Errc::PeerFailure, "channel hub closed while waiting");
        if (cv_.wait_until(lk, deadline) == std::cv_status::timeout)
            fail(Errc::Timeout, "channel wait timed out (stream " + std::to_string(stream) + ", tag " +
                                    std::to_string(tag) + ")");
    }
}

void ChannelHub::push_async(uint32_t group, uint32_t tag, uint32_t stream, Tensor t) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        async_[{group, tag}].push(AsyncMsg{stream, std::move(t)});
    }
    cv_.notify_all();
}

ChannelHub::AsyncMsg ChannelHub::pop_async(uint32_t group, uint32_t tag, int64_t timeout_ms) {
    std::unique_lock<std::mutex> lk(mu_);
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    auto key = std::make_pair(group, tag);
    while (true) {
        auto it = async_.find(key);
        if (it != async_.end() && !it->second.empty()) {
            AsyncMsg m = std::move(it->second.front());
            it->second.pop();
            if (it->second.empty()) async_.erase(it);
            return m;
        }
        if (closed_) fail(Errc::PeerFailure, "channel hub closed while waiting");
        if (cv_.wait_until(lk, deadline) == std::cv_status::timeout)
            fail(Errc::Timeout, "async wait timed out (group " + std::to_string(group) + ")");
    }
}

void ChannelHub::close() {
    {
        std::lock_guard<std::mutex> lk(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool ChannelHub::closed() const {
    std::lock_guard<std::mutex> lk(mu_);
    return closed_;
}

namespace {

uint32_t pair_stream(const CollectiveGroup& g, int from, int to) {
    return g.base + static_cast<uint32_t>(from * g.peers + to);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    if (parts.front().rank() == 1) return ops::concat(ptrs, 0);
    return ops::concat(ptrs, 0);
}

}  // namespace

Tensor all_gather(const CollectiveGroup& g, int self, const Tensor& local, uint32_t tag) {
    for (int p = 0; p < g.peers; ++p)
        if (p != self) g.hub->push(pair_stream(g, self, p), tag, local);
    std::vector<Tensor> parts;
    for (int p = 0; p < g.peers; ++p) {
        if (p == self)
            parts.push_back(local);
        else
            parts.push_back(g.hub->pop(pair_stream(g, p, self), tag, g.timeout_ms));
    }
    return concat_rows(parts);
}

Tensor gather(const CollectiveGroup& g, int root, int self, const Tensor& local, uint32_t tag) {
    if (self != root) {
        g.hub->push(pair_stream(g, self, root), tag, local);
        return Tensor{};
    }
    std::vector<Tensor> parts;
    for (int p = 0; p < g.peers; ++p) {
        if (p == root)
            parts.push_back(local);
        else
            parts.push_back(g.hub->pop(pair_stream(g, p, root), tag, g.timeout_ms));
    }
    return concat_rows(parts);
}

Tensor scatter(const CollectiveGroup& g, int root, int self, const Tensor& full, uint32_t tag) {
    if (self == root) {
        int64_t rows = full.dim(0);
        if (rows % g.peers != 0) fail(Errc::Shape, "scatter: rows not divisible by peer count");
        int64_t chunk = rows / g.peers;
        Tensor mine;
        for (int p = 0; p < g.peers; ++p) {
            Tensor part = ops::slice(full, 0, p * chunk, (p + 1) * chunk, false);
            if (p == root)
                mine = std::move(part);
            else
                g.hub->push(pair_stream(g, root, p), tag, std::move(part));
        }
        return mine;
    }
    return g.hub->pop(pair_stream(g, root, self), tag, g.timeout_ms);
}

Tensor broadcast(const CollectiveGroup& g, int root, int self, const Tensor& local, uint32_t tag) {
    if (self == root) {
        for (int p = 0; p < g.peers; ++p)
            if (p != root) g.hub->push(pair_stream(g, root, p), tag, local);
        return local;
    }
    return g.hub->pop(pair_stream(g, root, self), tag, g.timeout_ms);
}

void send_to(const CollectiveGroup& g, int self, int peer, const Tensor& t, uint32_t tag) {
    g.hub->push(pair_stream(g, self, peer), tag, t);
}

Tensor recv_from(const CollectiveGroup& g, int self, int peer, uint32_t tag) {
    return g.hub->pop(pair_stream(g, peer, self), tag, g.timeout_ms);
}

}  // namespace fraglow::run
