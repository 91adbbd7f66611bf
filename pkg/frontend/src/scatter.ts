// Scatter-plot geometry and canvas rendering for the labeling context:
// labeled ID points colored by class, the current query point highlighted.

import { BackgroundPoint, SessionItem } from "./api.js";

export interface ViewBox {
    minX: number;
    maxX: number;
    minY: number;
    maxY: number;
}

export const CLASS_PALETTE = [
    "#4469b0", "#d6642c", "#3d8f5f", "#b03a48", "#8265a7",
    "#8c6d31", "#5b8bd0", "#666666",
];

export function classColor(label: number): string {
    return CLASS_PALETTE[label % CLASS_PALETTE.length];
}

/** Bounding box of every visible point with a small relative margin. */
export function viewBox(points: Array<{ x: number; y: number }>, margin = 0.08): ViewBox {
    if (points.length === 0) {
        return { minX: -1, maxX: 1, minY: -1, maxY: 1 };
    }
    let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
    for (const p of points) {
        minX = Math.min(minX, p.x);
        maxX = Math.max(maxX, p.x);
        minY = Math.min(minY, p.y);
        maxY = Math.max(maxY, p.y);
    }
    const spanX = maxX - minX || 1;
    const spanY = maxY - minY || 1;
    return {
        minX: minX - margin * spanX,
        maxX: maxX + margin * spanX,
        minY: minY - margin * spanY,
        maxY: maxY + margin * spanY,
    };
}

/** Data coordinates -> pixel coordinates (y axis flipped for canvas). */
export function toPixel(p: { x: number; y: number }, box: ViewBox,
                        width: number, height: number): { px: number; py: number } {
    return {
        px: ((p.x - box.minX) / (box.maxX - box.minX)) * width,
        py: height - ((p.y - box.minY) / (box.maxY - box.minY)) * height,
    };
}

export function drawScatter(ctx: CanvasRenderingContext2D, width: number, height: number,
                            background: BackgroundPoint[], queue: SessionItem[],
                            currentId: number | null): void {
    const box = viewBox([...background, ...queue]);
    ctx.clearRect(0, 0, width, height);
    for (const p of background) {
        const { px, py } = toPixel(p, box, width, height);
        ctx.fillStyle = classColor(p.label);
        ctx.globalAlpha = 0.45;
        ctx.beginPath();
        ctx.arc(px, py, 2.5, 0, 2 * Math.PI);
        ctx.fill();
    }
    ctx.globalAlpha = 1.0;
    for (const item of queue) {
        const { px, py } = toPixel(item, box, width, height);
        if (item.sample_id === currentId) {
            ctx.strokeStyle = "#111";
            ctx.lineWidth = 2.5;
            ctx.beginPath();
            ctx.arc(px, py, 9, 0, 2 * Math.PI);
            ctx.stroke();
            ctx.fillStyle = "#111";
            ctx.beginPath();
            ctx.arc(px, py, 4.5, 0, 2 * Math.PI);
            ctx.fill();
        } else {
            ctx.strokeStyle = "#999";
            ctx.lineWidth = 1;
            ctx.beginPath();
            ctx.arc(px, py, 3.5, 0, 2 * Math.PI);
            ctx.stroke();
        }
    }
}
