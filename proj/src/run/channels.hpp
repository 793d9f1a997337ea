#pragma once

#include <condition_variable>
#include <map>
#include <mutex>
#include <queue>

#include "../core/tensor.hpp"

namespace fraglow::run {

// Tagged mailboxes shared by executor threads within one process. Remote
// deliveries land here through the worker's connection thread. Keys are
// (stream id, step tag); async streams additionally queue in arrival order.
class ChannelHub {
  public:
    void push(uint32_t stream, uint32_t tag, Tensor t);
    // Blocks until present; Errc::Timeout after timeout_ms, Errc::PeerFailure
    // once the hub is closed.
    Tensor pop(uint32_t stream, uint32_t tag, int64_t timeout_ms = 30000);

    struct AsyncMsg {
        uint32_t stream = 0;
        Tensor tensor;
    };
    void push_async(uint32_t group, uint32_t tag, uint32_t stream, Tensor t);
    AsyncMsg pop_async(uint32_t group, uint32_t tag, int64_t timeout_ms = 30000);

    void close();  // wake all waiters with PeerFailure
    bool closed() const;

  private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::pair<uint32_t, uint32_t>, std::queue<Tensor>> boxes_;
    std::map<std::pair<uint32_t, uint32_t>, std::queue<AsyncMsg>> async_;
    bool closed_ = false;
};

// Collective operations over a hub, with the peer set identified by dense
// indices 0..peers-1. Streams are derived from `base` per ordered pair.
// Semantics: AllGather concatenates along the leading dim ordered by peer
// index; Gather concatenates at the root; Scatter splits the root's tensor
// equally along the leading dim; Broadcast copies the root's tensor.
struct CollectiveGroup {
    ChannelHub* hub = nullptr;
    uint32_t base = 0;
    int peers = 1;
    int64_t timeout_ms = 30000;
};

Tensor all_gather(const CollectiveGroup& g, int self, const Tensor& local, uint32_t tag);
Tensor gather(const CollectiveGroup& g, int root, int self, const Tensor& local, uint32_t tag);
Tensor scatter(const CollectiveGroup& g, int root, int self, const Tensor& full, uint32_t tag);
Tensor broadcast(const CollectiveGroup& g, int root, int self, const Tensor& local, uint32_t tag);
void send_to(const CollectiveGroup& g, int self, int peer, const Tensor& t, uint32_t tag);
Tensor recv_from(const CollectiveGroup& g, int self, int peer, uint32_t tag);

}  // namespace fraglow::run
