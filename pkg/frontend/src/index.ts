export {
  PipelineHandle,
  augmentSlice,
  closePipeline,
  openPipeline,
  preprocessSlice,
  type AuditOp,
  type AuditRecord,
  type OpenOptions,
  type PipelineResult,
  type SliceId,
  type ViewingWindow,
} from "./pipeline.js";
export { decodeNpy, encodeNpy, readNpy, writeNpy, type NpyArray, type NpyData } from "./npy.js";
