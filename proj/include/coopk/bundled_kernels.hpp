#pragma once

// Bundled kernel sources; kept byte-identical to kernels/*.cka (checked by tests).

#include <string_view>

namespace coopk::kernels {

inline constexpr std::string_view bfs = R"cka(# Frontier-based breadth-first search over a CSR graph.
# Memory: offsets[n+1], edges[2m], levels[n] (-1 = unreached),
# two node lists n0/n1 whose cell 0 holds the list length.
.kernel bfs
.param offsets edges levels n0 n1
.transmit level in_nodes out_nodes
level := mov 0
in_nodes := mov n0
out_nodes := mov n1
size := load_global in_nodes
while size > 0
  tid := get_global_id
  stride := get_global_size
  nl := add level 1
  i := mov tid
  while i < size
    a := add in_nodes 1
    a := add a i
    v := load_global a
    e := add offsets v
    lo := load_global e
    e := add e 1
    hi := load_global e
    while lo < hi
      a := add edges lo
      w := load_global a
      a := add levels w
      old := atomic_cas a -1 nl
      if old == -1
        slot := atomic_add out_nodes 1
        a := add out_nodes 1
        a := add a slot
        store_global a w
      end
      lo := add lo 1
    end
    i := add i stride
  end
  t := mov in_nodes
  in_nodes := mov out_nodes
  out_nodes := mov t
  resizing_global_barrier
  store_global out_nodes 0
  level := add level 1
  resizing_global_barrier
  size := load_global in_nodes
end
)cka";

inline constexpr std::string_view bfs_plain = R"cka(# Non-cooperative BFS: same instruction stream with plain global barriers.
# Memory: offsets[n+1], edges[2m], levels[n] (-1 = unreached),
# two node lists n0/n1 whose cell 0 holds the list length.
.kernel bfs_plain
.param offsets edges levels n0 n1
level := mov 0
in_nodes := mov n0
out_nodes := mov n1
size := load_global in_nodes
while size > 0
  tid := get_global_id
  stride := get_global_size
  nl := add level 1
  i := mov tid
  while i < size
    a := add in_nodes 1
    a := add a i
    v := load_global a
    e := add offsets v
    lo := load_global e
    e := add e 1
    hi := load_global e
    while lo < hi
      a := add edges lo
      w := load_global a
      a := add levels w
      old := atomic_cas a -1 nl
      if old == -1
        slot := atomic_add out_nodes 1
        a := add out_nodes 1
        a := add a slot
        store_global a w
      end
      lo := add lo 1
    end
    i := add i stride
  end
  t := mov in_nodes
  in_nodes := mov out_nodes
  out_nodes := mov t
  global_barrier
  store_global out_nodes 0
  level := add level 1
  global_barrier
  size := load_global in_nodes
end
)cka";

inline constexpr std::string_view workstealing = R"cka(# Work stealing over per-workgroup task queues.
# Queue q occupies qstride cells at queues + q*qstride: [lock, head, tail, items...].
# A task is id*32 + depth; each task below maxdepth spawns `branching` children.
# pending counts unfinished tasks; log[0] is a cursor, log[1..] the processed tasks.
.kernel workstealing
.param queues nq qstride pending log branching maxdepth
.wgsize 1
work := atomic_load pending
while work > 0
  offer_kill
  request_fork
  qid := get_group_id
  task := mov -1
  k := mov 0
  while k < nq
    v := add qid k
    v := mod v nq
    base := mul v qstride
    base := add base queues
    got := atomic_cas base 0 1
    while got != 0
      got := atomic_cas base 0 1
    end
    h := add base 1
    head := load_global h
    tl := add base 2
    tail := load_global tl
    if head < tail
      a := add base 3
      a := add a head
      task := load_global a
      head := add head 1
      store_global h head
      k := mov nq
    end
    atomic_store base 0
    k := add k 1
  end
  if task >= 0
    slot := atomic_add log 1
    a := add log 1
    a := add a slot
    store_global a task
    depth := and task 31
    if depth < maxdepth
      id := shr task 5
      tmp := atomic_add pending branching
      base := mul qid qstride
      base := add base queues
      got := atomic_cas base 0 1
      while got != 0
        got := atomic_cas base 0 1
      end
      tl := add base 2
      tail := load_global tl
      dd := add depth 1
      j := mov 0
      while j < branching
        c := mul id branching
        c := add c j
        c := add c 1
        c := shl c 5
        c := or c dd
        a := add base 3
        a := add a tail
        store_global a c
        tail := add tail 1
        j := add j 1
      end
      store_global tl tail
      atomic_store base 0
    end
    tmp := atomic_add pending -1
  end
  work := atomic_load pending
end
)cka";

inline constexpr std::string_view workstealing_plain = R"cka(# Non-cooperative work stealing: identical apart from the resize points.
# Queue q occupies qstride cells at queues + q*qstride: [lock, head, tail, items...].
# A task is id*32 + depth; each task below maxdepth spawns `branching` children.
# pending counts unfinished tasks; log[0] is a cursor, log[1..] the processed tasks.
.kernel workstealing_plain
.param queues nq qstride pending log branching maxdepth
.wgsize 1
work := atomic_load pending
while work > 0
  qid := get_group_id
  task := mov -1
  k := mov 0
  while k < nq
    v := add qid k
    v := mod v nq
    base := mul v qstride
    base := add base queues
    got := atomic_cas base 0 1
    while got != 0
      got := atomic_cas base 0 1
    end
    h := add base 1
    head := load_global h
    tl := add base 2
    tail := load_global tl
    if head < tail
      a := add base 3
      a := add a head
      task := load_global a
      head := add head 1
      store_global h head
      k := mov nq
    end
    atomic_store base 0
    k := add k 1
  end
  if task >= 0
    slot := atomic_add log 1
    a := add log 1
    a := add a slot
    store_global a task
    depth := and task 31
    if depth < maxdepth
      id := shr task 5
      tmp := atomic_add pending branching
      base := mul qid qstride
      base := add base queues
      got := atomic_cas base 0 1
      while got != 0
        got := atomic_cas base 0 1
      end
      tl := add base 2
      tail := load_global tl
      dd := add depth 1
      j := mov 0
      while j < branching
        c := mul id branching
        c := add c j
        c := add c 1
        c := shl c 5
        c := or c dd
        a := add base 3
        a := add a tail
        store_global a c
        tail := add tail 1
        j := add j 1
      end
      store_global tl tail
      atomic_store base 0
    end
    tmp := atomic_add pending -1
  end
  work := atomic_load pending
end
)cka";

inline constexpr std::string_view mutex = R"cka(# Two workgroups increment a counter under a spin lock.
# global[0] is the lock, global[1] the counter.
.kernel mutex_demo
.groups 2
got := atomic_cas 0 0 1
while got != 0
  got := atomic_cas 0 0 1
end
c := load_global 1
c := add c 1
store_global 1 c
atomic_store 0 0
)cka";

inline constexpr std::string_view barrier = R"cka(# Every workgroup publishes a flag, meets at a global barrier, then reads
# its neighbour's flag.
.kernel barrier_demo
.groups 3
g := get_group_id
store_global g 1
global_barrier
n := get_num_groups
p := add g 1
p := mod p n
f := load_global p
)cka";

inline constexpr std::string_view resize = R"cka(# Two resizing barriers around per-workgroup writes; t is transmitted.
.kernel resize_micro
.groups 3
.transmit t
t := mov 5
resizing_global_barrier
g := get_group_id
store_global g t
t := add t 1
resizing_global_barrier
n := get_num_groups
g := get_group_id
a := add g 3
store_global a n
)cka";

}  // namespace coopk::kernels
