#pragma once

// Reverse-mode tape. Forward recording pushes one closure per model stage;
// backward() runs them once in reverse order. Adjoint buffers are keyed by
// integer variable ids and created zero-filled on first write, so a node
// whose output never received an adjoint can skip its work (find_* returns
// null). Complex adjoints follow the Wirtinger convention: the buffer for x
// holds dL/dconj(x), which makes steepest descent x <- x - lr * adj.
//
// Byte accounting covers adjoint buffers plus whatever the recording code
// declares via note_saved_bytes (the forward intermediates captured in the
// closures); totals feed the process-wide MemoryMeter so the optimizer can
// log live tape memory.

#include <functional>
#include <unordered_map>
#include <vector>

#include "ptycho/errors.hpp"
#include "ptycho/meter.hpp"
#include "ptycho/types.hpp"

namespace ptycho {

template <class Real>
class Tape {
public:
    Tape() = default;
    ~Tape() { MemoryMeter::sub(bytes_); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int fresh_id() { return next_id_++; }

    void push_node(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

    CArr<Real>& cadj(int id, Eigen::Index ny, Eigen::Index nx) {
        auto it = cadjs_.find(id);
        if (it == cadjs_.end()) {
            it = cadjs_.emplace(id, CArr<Real>::Zero(ny, nx)).first;
            account(std::int64_t(ny) * nx * sizeof(Cpx<Real>));
        }
        return it->second;
    }
    RArr<Real>& radj(int id, Eigen::Index ny, Eigen::Index nx) {
        auto it = radjs_.find(id);
        if (it == radjs_.end()) {
            it = radjs_.emplace(id, RArr<Real>::Zero(ny, nx)).first;
            account(std::int64_t(ny) * nx * sizeof(Real));
        }
        return it->second;
    }
    Real& sadj(int id) {
        auto it = sadjs_.find(id);
        if (it == sadjs_.end()) it = sadjs_.emplace(id, Real(0)).first;
        return it->second;
    }
    Vec2<Real>& vadj(int id) {
        auto it = vadjs_.find(id);
        if (it == vadjs_.end()) it = vadjs_.emplace(id, Vec2<Real>::Zero()).first;
        return it->second;
    }

    const CArr<Real>* find_cadj(int id) const {
        auto it = cadjs_.find(id);
        return it == cadjs_.end() ? nullptr : &it->second;
    }
    const RArr<Real>* find_radj(int id) const {
        auto it = radjs_.find(id);
        return it == radjs_.end() ? nullptr : &it->second;
    }
    const Real* find_sadj(int id) const {
        auto it = sadjs_.find(id);
        return it == sadjs_.end() ? nullptr : &it->second;
    }
    const Vec2<Real>* find_vadj(int id) const {
        auto it = vadjs_.find(id);
        return it == vadjs_.end() ? nullptr : &it->second;
    }

    void note_saved_bytes(std::int64_t b) { account(b); }

    // Runs every node exactly once, newest first. A second call is a
    // replay mismatch.
    void backward() {
        if (ran_) throw InternalConsistencyError("tape backward pass already consumed");
        ran_ = true;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    std::int64_t bytes() const { return bytes_; }
    std::size_t nodes() const { return nodes_.size(); }

private:
    void account(std::int64_t b) {
        bytes_ += b;
        MemoryMeter::add(b);
    }

    std::vector<std::function<void()>> nodes_;
    std::unordered_map<int, CArr<Real>> cadjs_;
    std::unordered_map<int, RArr<Real>> radjs_;
    std::unordered_map<int, Real> sadjs_;
    std::unordered_map<int, Vec2<Real>> vadjs_;
    int next_id_ = 0;
    std::int64_t bytes_ = 0;
    bool ran_ = false;
};

} // namespace ptycho
