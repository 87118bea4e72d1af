import os
import chromaquery.cqcli as cqcli
import chromaquery.cqcolorspace as cqcolorspace
import chromaquery.cqfiles as cqfiles
import chromaquery.cqtrainer as cqtrainer
from chromaquery.cqdata import RgbImage

scriptDir = os.path.dirname(os.path.realpath(__file__))
checkpoint = os.path.join(scriptDir, 'runs', 'example', 'checkpoint.pt')

model, cfg = cqtrainer.load_generator(checkpoint)

# any size works, the luminance is padded to a multiple of 32 and cropped back
image = cqfiles.load_image(os.path.join(scriptDir, 'photo.jpg'))
lab = cqcli.colorize_image(model, image)
cqfiles.save_image(os.path.join(scriptDir, 'photo_colorized.png'), RgbImage.from_tensor(cqcolorspace.lab_to_rgb(lab)))

# per-query heatmaps, one PNG per color query
x_L, (h, w) = cqcli.pad_to_multiple(cqcli.luminance_of(image))
maps = model.query_maps(x_L)[0, :, :h, :w]
for k, heat in enumerate(maps):
    cqfiles.save_heatmap(os.path.join(scriptDir, 'queries', 'query_{:03d}.png'.format(k)), heat.numpy())
