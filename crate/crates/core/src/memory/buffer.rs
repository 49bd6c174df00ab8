//! Kernel I/O buffers in the shared scratchpad.
//!
//! A buffer is a window over a logical stream of fixed-size items. Items in
//! `[first_live, written)` are readable, items in `[written, reserved)` are
//! output slots handed to the kernel that is currently running. Every
//! consumer of a buffer owns a read cursor; an item is freed once all
//! cursors have moved past it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::Fault;

pub type BufferId = u32;
pub type ReaderId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ElemType {
    F32,
    /// Symmetric int8 with a per-tensor scale.
    I8 { scale: f32 },
}

impl ElemType {
    pub fn bytes(&self) -> u64 {
        match self {
            ElemType::F32 => 4,
            ElemType::I8 { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BufferSpec {
    pub item_len: usize,
    pub elem: ElemType,
    pub capacity_items: u64,
}

impl BufferSpec {
    pub fn item_bytes(&self) -> u64 {
        self.item_len as u64 * self.elem.bytes()
    }
}

#[derive(Debug, Clone)]
enum Storage {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

#[derive(Debug, Clone)]
pub struct TensorBuffer {
    spec: BufferSpec,
    first_live: u64,
    written: u64,
    reserved: u64,
    readers: BTreeMap<ReaderId, u64>,
    storage: Storage,
}

impl TensorBuffer {
    pub fn new(spec: BufferSpec) -> Self {
        let storage = match spec.elem {
            ElemType::F32 => Storage::F32(Vec::new()),
            ElemType::I8 { .. } => Storage::I8(Vec::new()),
        };
        Self {
            spec,
            first_live: 0,
            written: 0,
            reserved: 0,
            readers: BTreeMap::new(),
            storage,
        }
    }

    pub fn spec(&self) -> &BufferSpec {
        &self.spec
    }

    pub fn item_len(&self) -> usize {
        self.spec.item_len
    }

    pub fn elem(&self) -> ElemType {
        self.spec.elem
    }

    pub fn first_live(&self) -> u64 {
        self.first_live
    }

    /// Number of items ever completed in this stream.
    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn reserved(&self) -> u64 {
        self.reserved
    }

    pub fn live_items(&self) -> u64 {
        self.reserved - self.first_live
    }

    pub fn live_bytes(&self) -> u64 {
        self.live_items() * self.spec.item_bytes()
    }

    pub fn add_reader(&mut self, reader: ReaderId) {
        self.readers.entry(reader).or_insert(self.first_live);
    }

    pub fn reader_position(&self, reader: ReaderId) -> Option<u64> {
        self.readers.get(&reader).copied()
    }

    /// Opens `n` output slots after the current reservation. Shared-memory
    /// accounting is done by the caller.
    pub(crate) fn reserve(&mut self, n: u64) -> Result<u64, Fault> {
        if self.live_items() + n > self.spec.capacity_items {
            return Err(Fault::Capacity(format!(
                "buffer overflow: {} live + {n} requested > {} items",
                self.live_items(),
                self.spec.capacity_items
            )));
        }
        let base = self.reserved;
        self.reserved += n;
        let elems = (self.reserved - self.first_live) as usize * self.spec.item_len;
        match &mut self.storage {
            Storage::F32(v) => v.resize(elems, 0.0),
            Storage::I8(v) => v.resize(elems, 0),
        }
        Ok(base)
    }

    /// Marks the first `n` reserved slots as written.
    pub(crate) fn commit(&mut self, n: u64) -> Result<(), Fault> {
        if self.written + n > self.reserved {
            return Err(Fault::Logic(format!(
                "commit of {n} items exceeds reservation ({} written, {} reserved)",
                self.written, self.reserved
            )));
        }
        self.written += n;
        Ok(())
    }

    /// Advances `reader` by `n` items and frees everything behind the
    /// slowest reader.
    pub fn consume(&mut self, reader: ReaderId, n: u64) -> Result<(), Fault> {
        let pos = self
            .readers
            .get_mut(&reader)
            .ok_or_else(|| Fault::Logic(format!("reader {reader} is not registered")))?;
        if *pos + n > self.written {
            return Err(Fault::Logic(format!(
                "over-consumption: reader at {} consuming {n} with {} written",
                *pos, self.written
            )));
        }
        *pos += n;
        let new_first = self.readers.values().copied().min().unwrap_or(self.written);
        if new_first > self.first_live {
            let drop = (new_first - self.first_live) as usize * self.spec.item_len;
            match &mut self.storage {
                Storage::F32(v) => {
                    v.drain(..drop);
                }
                Storage::I8(v) => {
                    v.drain(..drop);
                }
            }
            self.first_live = new_first;
        }
        Ok(())
    }

    fn offset(&self, index: u64) -> Result<usize, Fault> {
        if index < self.first_live || index >= self.reserved {
            return Err(Fault::InputNotLive(index));
        }
        Ok((index - self.first_live) as usize * self.spec.item_len)
    }

    fn readable_offset(&self, index: u64) -> Result<usize, Fault> {
        if index >= self.written {
            return Err(Fault::InputNotLive(index));
        }
        self.offset(index)
    }

    pub fn item_f32(&self, index: u64) -> Result<&[f32], Fault> {
        let off = self.readable_offset(index)?;
        match &self.storage {
            Storage::F32(v) => Ok(&v[off..off + self.spec.item_len]),
            Storage::I8(_) => Err(Fault::Logic("int8 buffer read as f32".into())),
        }
    }

    pub fn item_i8(&self, index: u64) -> Result<&[i8], Fault> {
        let off = self.readable_offset(index)?;
        match &self.storage {
            Storage::I8(v) => Ok(&v[off..off + self.spec.item_len]),
            Storage::F32(_) => Err(Fault::Logic("f32 buffer read as int8".into())),
        }
    }

    /// Reads one element as a real value, dequantizing int8 storage.
    pub fn value(&self, index: u64, elem: usize) -> Result<f32, Fault> {
        let off = self.readable_offset(index)? + elem;
        Ok(match (&self.storage, self.spec.elem) {
            (Storage::F32(v), _) => v[off],
            (Storage::I8(v), ElemType::I8 { scale }) => f32::from(v[off]) * scale,
            (Storage::I8(_), ElemType::F32) => unreachable!(),
        })
    }

    /// Writes one element of a reserved, not yet committed slot. For int8
    /// buffers the value must already be an integer in range.
    pub fn write(&mut self, index: u64, elem: usize, value: f32) -> Result<(), Fault> {
        if index < self.written {
            return Err(Fault::Logic(format!("item {index} already committed")));
        }
        let off = self.offset(index)? + elem;
        match &mut self.storage {
            Storage::F32(v) => v[off] = value,
            Storage::I8(v) => v[off] = value as i8,
        }
        Ok(())
    }

    pub fn write_item(&mut self, index: u64, values: &[f32]) -> Result<(), Fault> {
        if values.len() != self.spec.item_len {
            return Err(Fault::Logic(format!(
                "item length {} != {}",
                values.len(),
                self.spec.item_len
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            self.write(index, i, v)?;
        }
        Ok(())
    }

    pub(crate) fn clear(&mut self) {
        self.first_live = 0;
        self.written = 0;
        self.reserved = 0;
        for pos in self.readers.values_mut() {
            *pos = 0;
        }
        match &mut self.storage {
            Storage::F32(v) => v.clear(),
            Storage::I8(v) => v.clear(),
        }
    }
}

/// Occupancy snapshot of one buffer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferOccupancy {
    pub id: BufferId,
    pub live_items: u64,
    pub live_bytes: u64,
}

/// The shared scratchpad: a set of buffers under one byte budget.
#[derive(Debug, Clone)]
pub struct SharedMemory {
    capacity_bytes: u64,
    buffers: BTreeMap<BufferId, TensorBuffer>,
    peak_bytes: u64,
}

impl SharedMemory {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            buffers: BTreeMap::new(),
            peak_bytes: 0,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    /// Declares a buffer. Re-declaring with the same spec is a no-op apart
    /// from registering extra readers.
    pub fn declare(
        &mut self,
        id: BufferId,
        spec: BufferSpec,
        readers: &[ReaderId],
    ) -> Result<(), String> {
        let buf = self
            .buffers
            .entry(id)
            .or_insert_with(|| TensorBuffer::new(spec));
        if buf.spec != spec {
            return Err(format!(
                "buffer {id} declared twice with different layouts"
            ));
        }
        for &r in readers {
            buf.add_reader(r);
        }
        Ok(())
    }

    pub fn get(&self, id: BufferId) -> Result<&TensorBuffer, Fault> {
        self.buffers.get(&id).ok_or(Fault::UnknownBuffer(id))
    }

    pub fn get_mut(&mut self, id: BufferId) -> Result<&mut TensorBuffer, Fault> {
        self.buffers.get_mut(&id).ok_or(Fault::UnknownBuffer(id))
    }

    pub fn live_bytes(&self) -> u64 {
        self.buffers.values().map(TensorBuffer::live_bytes).sum()
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak_bytes
    }

    /// Reserves `n` output items in buffer `id`, enforcing both the buffer's
    /// own capacity and the total shared-memory size.
    pub fn reserve_output(&mut self, id: BufferId, n: u64) -> Result<u64, Fault> {
        let total = self.live_bytes();
        let capacity = self.capacity_bytes;
        let buf = self.get_mut(id)?;
        let extra = n * buf.spec.item_bytes();
        if total + extra > capacity {
            return Err(Fault::Capacity(format!(
                "shared memory overflow: {total} live bytes + {extra} requested > {capacity} bytes"
            )));
        }
        let base = buf.reserve(n)?;
        self.peak_bytes = self.peak_bytes.max(total + extra);
        Ok(base)
    }

    pub fn commit(&mut self, id: BufferId, n: u64) -> Result<(), Fault> {
        self.get_mut(id)?.commit(n)
    }

    pub fn consume_inputs(&mut self, id: BufferId, reader: ReaderId, n: u64) -> Result<(), Fault> {
        self.get_mut(id)?.consume(reader, n)
    }

    pub fn occupancy(&self) -> Vec<BufferOccupancy> {
        self.buffers
            .iter()
            .map(|(&id, b)| BufferOccupancy {
                id,
                live_items: b.live_items(),
                live_bytes: b.live_bytes(),
            })
            .collect()
    }

    /// Empties every buffer; declarations are kept.
    pub fn clear(&mut self) {
        for b in self.buffers.values_mut() {
            b.clear();
        }
        self.peak_bytes = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(item_len: usize) -> BufferSpec {
        BufferSpec {
            item_len,
            elem: ElemType::F32,
            capacity_items: 1 << 20,
        }
    }

    #[test]
    fn reserve_counts_bytes() {
        let mut sm = SharedMemory::new(512 * 1024);
        sm.declare(0, frames(80), &[0]).unwrap();
        sm.reserve_output(0, 3).unwrap();
        assert_eq!(sm.live_bytes(), 960);
    }

    #[test]
    fn total_capacity_enforced() {
        let mut sm = SharedMemory::new(512 * 1024);
        sm.declare(0, frames(1024), &[0]).unwrap();
        sm.reserve_output(0, 128).unwrap();
        assert_eq!(sm.live_bytes(), 512 * 1024);
        let err = sm.reserve_output(0, 1).unwrap_err();
        assert!(matches!(err, Fault::Capacity(_)));
    }

    #[test]
    fn per_buffer_capacity_enforced() {
        let mut sm = SharedMemory::new(1 << 30);
        let spec = BufferSpec {
            capacity_items: 4,
            ..frames(2)
        };
        sm.declare(0, spec, &[0]).unwrap();
        sm.reserve_output(0, 4).unwrap();
        assert!(sm.reserve_output(0, 1).is_err());
    }

    #[test]
    fn sliding_window_consumption() {
        // window 10, stride 2 over 16 live items: 4 outputs, the first 8
        // items are never needed again.
        let mut sm = SharedMemory::new(1 << 20);
        sm.declare(0, frames(1), &[7]).unwrap();
        sm.reserve_output(0, 16).unwrap();
        sm.commit(0, 16).unwrap();
        let (window, stride, live) = (10u64, 2u64, 16u64);
        let outputs = (live - window) / stride + 1;
        // enumeration oracle: first item still referenced by a future window
        let next_window_start = (0..).map(|j| j * stride).find(|&s| s / stride >= outputs).unwrap();
        assert_eq!(outputs, 4);
        sm.consume_inputs(0, 7, outputs * stride).unwrap();
        let b = sm.get(0).unwrap();
        assert_eq!(b.first_live(), next_window_start);
        assert_eq!(b.live_items(), 8);
    }

    #[test]
    fn consume_zero_is_noop_and_over_consumption_fails() {
        let mut sm = SharedMemory::new(1 << 20);
        sm.declare(0, frames(1), &[0]).unwrap();
        sm.reserve_output(0, 2).unwrap();
        sm.commit(0, 2).unwrap();
        sm.consume_inputs(0, 0, 0).unwrap();
        assert_eq!(sm.get(0).unwrap().live_items(), 2);
        assert!(matches!(sm.consume_inputs(0, 0, 3), Err(Fault::Logic(_))));
    }

    #[test]
    fn slowest_reader_holds_items() {
        let mut sm = SharedMemory::new(1 << 20);
        sm.declare(0, frames(1), &[1, 2]).unwrap();
        sm.reserve_output(0, 3).unwrap();
        sm.commit(0, 3).unwrap();
        sm.consume_inputs(0, 1, 3).unwrap();
        assert_eq!(sm.get(0).unwrap().live_items(), 3);
        sm.consume_inputs(0, 2, 2).unwrap();
        assert_eq!(sm.get(0).unwrap().first_live(), 2);
    }

    #[test]
    fn stream_preserves_items_in_order() {
        let mut sm = SharedMemory::new(1 << 20);
        sm.declare(
            0,
            BufferSpec {
                item_len: 2,
                elem: ElemType::I8 { scale: 0.5 },
                capacity_items: 64,
            },
            &[0],
        )
        .unwrap();
        let mut seen = Vec::new();
        let mut next = 0i8;
        for batch in [3u64, 0, 5, 1] {
            let base = sm.reserve_output(0, batch).unwrap();
            for i in 0..batch {
                let b = sm.get_mut(0).unwrap();
                b.write_item(base + i, &[next as f32, -(next as f32)]).unwrap();
                next += 1;
            }
            sm.commit(0, batch).unwrap();
            let b = sm.get(0).unwrap();
            let start = b.reader_position(0).unwrap();
            for i in start..b.written() {
                seen.push(b.item_i8(i).unwrap()[0]);
                assert_eq!(b.value(i, 1).unwrap(), -0.5 * f32::from(b.item_i8(i).unwrap()[0]));
            }
            let n = b.written() - start;
            sm.consume_inputs(0, 0, n).unwrap();
        }
        assert_eq!(seen, (0..9).collect::<Vec<i8>>());
    }

    #[test]
    fn reading_uncommitted_slot_fails() {
        let mut b = TensorBuffer::new(frames(1));
        b.reserve(1).unwrap();
        assert_eq!(b.item_f32(0), Err(Fault::InputNotLive(0)));
    }
}
