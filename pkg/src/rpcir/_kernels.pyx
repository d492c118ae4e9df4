# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: row scatter-add, capped BFS, relational walk enumeration."""
import numpy as np
cimport numpy as cnp
from libcpp.unordered_set cimport unordered_set
from libcpp.vector cimport vector

cnp.import_array()

ctypedef long long i64


def scatter_add_rows(index, values, Py_ssize_t num_rows):
    cdef const i64[::1] idx = np.ascontiguousarray(index, dtype=np.int64)
    vals_in = np.asarray(values, dtype=np.float64)
    tail_shape = vals_in.shape[1:]
    cdef Py_ssize_t n = idx.shape[0]
    cdef const double[:, ::1] vals = np.ascontiguousarray(vals_in.reshape(n, int(np.prod(tail_shape, dtype=np.int64))))
    cdef Py_ssize_t width = vals.shape[1]
    out_arr = np.zeros((num_rows, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef i64 r
    for i in range(n):
        r = idx[i]
        if r < 0 or r >= num_rows:
            raise IndexError(f"scatter index {r} out of range for {num_rows} rows")
        for j in range(width):
            out[r, j] += vals[i, j]
    return out_arr.reshape((num_rows,) + tail_shape)


def bfs_distances(indptr, indices, Py_ssize_t source, i64 max_depth):
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const i64[::1] nbr = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = ptr.shape[0] - 1
    dist_arr = np.full(n, -1, dtype=np.int64)
    cdef i64[::1] dist = dist_arr
    cdef vector[i64] queue
    cdef Py_ssize_t head = 0
    cdef i64 u, v, d, k
    dist[source] = 0
    queue.push_back(source)
    while head < <Py_ssize_t>queue.size():
        u = queue[head]
        head += 1
        d = dist[u]
        if d >= max_depth:
            continue
        for k in range(ptr[u], ptr[u + 1]):
            v = nbr[k]
            if dist[v] < 0:
                dist[v] = d + 1
                queue.push_back(v)
    return dist_arr


def relation_walks(indptr, rel, dst, i64 head, i64 tail, int max_len):
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const i64[::1] rels = np.ascontiguousarray(rel, dtype=np.int64)
    cdef const i64[::1] dsts = np.ascontiguousarray(dst, dtype=np.int64)
    cdef i64 n = ptr.shape[0] - 1
    cdef i64 base = 1
    if rels.shape[0] > 0:
        base = np.max(rel) + 2
    # sequences are packed as base-`base` digits (rel + 1), states as code * n + node
    if max_len * np.log2(float(base)) + np.log2(float(max(n, 1))) > 62:
        from ._kernels_py import relation_walks as fallback
        return fallback(indptr, rel, dst, head, tail, max_len)

    cdef vector[i64] front_node, front_code, next_node, next_code
    cdef unordered_set[i64] seen
    cdef unordered_set[i64] found
    cdef Py_ssize_t i
    cdef i64 u, v, code, ncode, k, key
    front_node.push_back(head)
    front_code.push_back(0)
    for _ in range(max_len):
        next_node.clear()
        next_code.clear()
        seen.clear()
        for i in range(<Py_ssize_t>front_node.size()):
            u = front_node[i]
            code = front_code[i]
            for k in range(ptr[u], ptr[u + 1]):
                v = dsts[k]
                ncode = code * base + rels[k] + 1
                key = ncode * n + v
                if seen.count(key) == 0:
                    seen.insert(key)
                    next_node.push_back(v)
                    next_code.push_back(ncode)
                if v == tail:
                    found.insert(ncode)
        front_node.swap(next_node)
        front_code.swap(next_code)

    out = []
    cdef i64 c
    for c in found:
        seq = []
        while c > 0:
            seq.append(<i64>(c % base) - 1)
            c //= base
        out.append(tuple(reversed(seq)))
    out.sort(key=lambda s: (len(s), s))
    return out
